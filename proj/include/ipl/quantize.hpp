#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ipl/tensor.hpp"

namespace ipl {

// Affine quantization range fit. The float range is widened to include zero
// before fitting, so the zero point never clamps and zero round-trips
// exactly; a degenerate range widens t_max by 1.
struct QuantParams {
  float scale = 1.f;
  int zero_point = 0;
  int q_min = 0;
  int q_max = 255;
  float t_min = 0.f;
  float t_max = 0.f;

  void validate() const {
    if (!(scale > 0.f)) throw ValueError("quant scale must be > 0");
    if (q_min >= q_max) throw ValueError("quant range empty: q_min >= q_max");
    if (q_min < 0 || q_max > 255) {
      throw ValueError("quant codes must fit an unsigned byte, got [" +
                       std::to_string(q_min) + "," + std::to_string(q_max) + "]");
    }
    if (zero_point < q_min || zero_point > q_max) {
      throw ValueError("zero point outside quant range");
    }
  }
};

struct QuantizedTensor {
  Shape3 shape{};
  QuantParams params{};
  std::vector<std::uint8_t> codes;

  std::size_t payload_bytes() const { return codes.size(); }
};

namespace detail {

inline double round_half_away(double v) { return std::round(v); }

}  // namespace detail

inline QuantParams fit_params(const Tensor3& t, int q_min = 0, int q_max = 255) {
  if (q_min >= q_max) throw ValueError("quant range empty: q_min >= q_max");
  float lo = 0.f, hi = 0.f;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const float v = t.data()[i];
    if (!std::isfinite(v)) throw ValueError("fit_params: non-finite input");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12f) hi = lo + 1.f;
  QuantParams p;
  p.q_min = q_min;
  p.q_max = q_max;
  p.t_min = lo;
  p.t_max = hi;
  p.scale = (hi - lo) / static_cast<float>(q_max - q_min);
  const double zp = detail::round_half_away(q_min - static_cast<double>(lo) / p.scale);
  p.zero_point = static_cast<int>(std::min<double>(q_max, std::max<double>(q_min, zp)));
  p.validate();
  return p;
}

inline QuantizedTensor encode(const Tensor3& t, const QuantParams& p) {
  p.validate();
  QuantizedTensor q;
  q.shape = t.shape();
  q.params = p;
  q.codes.resize(static_cast<std::size_t>(t.numel()));
  const float inv_s = 1.f / p.scale;
  const float* src = t.data();
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double c = detail::round_half_away(static_cast<double>(src[i]) * inv_s +
                                             p.zero_point);
    q.codes[i] = static_cast<std::uint8_t>(
        std::min<double>(p.q_max, std::max<double>(p.q_min, c)));
  }
  return q;
}

inline Tensor3 decode(const QuantizedTensor& q) {
  if (static_cast<std::int64_t>(q.codes.size()) != q.shape.numel()) {
    throw FormatError("quantized payload length " + std::to_string(q.codes.size()) +
                      " does not match shape " + q.shape.str());
  }
  q.params.validate();
  Tensor3 out(q.shape);
  float* dst = out.data();
  const float s = q.params.scale;
  const int zp = q.params.zero_point;
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    dst[i] = s * static_cast<float>(static_cast<int>(q.codes[i]) - zp);
  }
  return out;
}

inline QuantizedTensor quantize(const Tensor3& t, int q_min = 0, int q_max = 255) {
  return encode(t, fit_params(t, q_min, q_max));
}

// Wire layout: shape as 3 u32 LE, then scale/t_min/t_max as f32 LE, then
// zero_point/q_min/q_max as i32 LE, then the raw code bytes.
namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const std::uint8_t* p) {
  const std::uint32_t v = get_u32(p);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

constexpr std::size_t kQuantHeaderBytes = 36;

inline std::vector<std::uint8_t> serialize(const QuantizedTensor& q) {
  std::vector<std::uint8_t> out;
  out.reserve(kQuantHeaderBytes + q.codes.size());
  detail::put_u32(out, static_cast<std::uint32_t>(q.shape.c));
  detail::put_u32(out, static_cast<std::uint32_t>(q.shape.w));
  detail::put_u32(out, static_cast<std::uint32_t>(q.shape.h));
  detail::put_f32(out, q.params.scale);
  detail::put_f32(out, q.params.t_min);
  detail::put_f32(out, q.params.t_max);
  detail::put_u32(out, static_cast<std::uint32_t>(q.params.zero_point));
  detail::put_u32(out, static_cast<std::uint32_t>(q.params.q_min));
  detail::put_u32(out, static_cast<std::uint32_t>(q.params.q_max));
  out.insert(out.end(), q.codes.begin(), q.codes.end());
  return out;
}

inline QuantizedTensor deserialize(const std::uint8_t* data, std::size_t size) {
  if (size < kQuantHeaderBytes) {
    throw FormatError("quantized tensor blob truncated: " + std::to_string(size) +
                      " bytes");
  }
  QuantizedTensor q;
  q.shape.c = static_cast<int>(detail::get_u32(data));
  q.shape.w = static_cast<int>(detail::get_u32(data + 4));
  q.shape.h = static_cast<int>(detail::get_u32(data + 8));
  q.params.scale = detail::get_f32(data + 12);
  q.params.t_min = detail::get_f32(data + 16);
  q.params.t_max = detail::get_f32(data + 20);
  q.params.zero_point = static_cast<int>(detail::get_u32(data + 24));
  q.params.q_min = static_cast<int>(detail::get_u32(data + 28));
  q.params.q_max = static_cast<int>(detail::get_u32(data + 32));
  if (q.shape.c < 1 || q.shape.w < 1 || q.shape.h < 1) {
    throw FormatError("quantized tensor blob has invalid shape " + q.shape.str());
  }
  if (size != kQuantHeaderBytes + static_cast<std::size_t>(q.shape.numel())) {
    throw FormatError("quantized tensor blob size mismatch for shape " +
                      q.shape.str());
  }
  q.codes.assign(data + kQuantHeaderBytes, data + size);
  return q;
}

}  // namespace ipl
