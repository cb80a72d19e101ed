#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "ipl/image_io.hpp"
#include "ipl/model.hpp"
#include "ipl/quantize.hpp"

namespace ipl {

// IPLW v1 container: magic, version, config block (num_fibs, channels, r,
// chunk sizes, lfe_reduction, drtm size as u32 LE), then one record per
// tensor: name length u32, name bytes, rank u32, dims u32 x rank, f32 LE
// payload. The embedded config pins the expected record manifest.
constexpr char kWeightsMagic[4] = {'I', 'P', 'L', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void put_record(std::vector<std::uint8_t>& out, const std::string& name,
                       const std::vector<int>& dims, const std::vector<float>& data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  std::size_t n = 1;
  for (int d : dims) {
    put_u32(out, static_cast<std::uint32_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  if (n != data.size()) throw ValueError("record " + name + " dims/payload mismatch");
  for (float v : data) put_f32(out, v);
}

struct RecordReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;
  std::string origin;

  void need(std::size_t n, const char* what) const {
    if (pos + n > size) {
      throw FormatError("weights file " + origin + " truncated in " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const std::uint32_t v = get_u32(data + pos);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    need(4, what);
    const float v = get_f32(data + pos);
    pos += 4;
    return v;
  }
  bool done() const { return pos == size; }
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const ModelWeights& weights,
                                                const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kWeightsMagic, kWeightsMagic + 4);
  detail::put_u32(out, kWeightsVersion);
  for (int v : {cfg.num_fibs, cfg.channels, cfg.downsample, cfg.chunk_c,
                cfg.chunk_w, cfg.chunk_h, cfg.lfe_reduction, cfg.drtm_w,
                cfg.drtm_h}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  weights.for_each_param([&](const std::string& name, const ConvParams& p) {
    detail::put_record(out, name + ".weight", {p.out_ch, p.in_ch, p.k, p.k},
                       p.weight);
    detail::put_record(out, name + ".bias", {p.out_ch}, p.bias);
  });
  return out;
}

struct LoadedWeights {
  ModelWeights weights;
  ModelConfig config;
};

inline LoadedWeights decode_weights(const std::vector<std::uint8_t>& bytes,
                                    const std::string& origin = "<memory>") {
  detail::RecordReader r{bytes.data(), bytes.size(), 0, origin};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw FormatError("weights file " + origin + " has bad magic");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kWeightsVersion) {
    throw FormatError("weights file " + origin + " has unsupported version " +
                      std::to_string(version));
  }
  LoadedWeights out;
  ModelConfig& cfg = out.config;
  cfg.num_fibs = static_cast<int>(r.u32("config"));
  cfg.channels = static_cast<int>(r.u32("config"));
  cfg.downsample = static_cast<int>(r.u32("config"));
  cfg.chunk_c = static_cast<int>(r.u32("config"));
  cfg.chunk_w = static_cast<int>(r.u32("config"));
  cfg.chunk_h = static_cast<int>(r.u32("config"));
  cfg.lfe_reduction = static_cast<int>(r.u32("config"));
  cfg.drtm_w = static_cast<int>(r.u32("config"));
  cfg.drtm_h = static_cast<int>(r.u32("config"));
  try {
    cfg.validate();
  } catch (const ValueError& e) {
    throw FormatError("weights file " + origin + " has invalid config: " +
                      e.what());
  }

  out.weights = make_zero_weights(cfg);
  std::map<std::string, std::pair<std::vector<int>, std::vector<float>*>> expect;
  out.weights.for_each_param([&](const std::string& name, ConvParams& p) {
    expect.emplace(name + ".weight",
                   std::make_pair(std::vector<int>{p.out_ch, p.in_ch, p.k, p.k},
                                  &p.weight));
    expect.emplace(name + ".bias",
                   std::make_pair(std::vector<int>{p.out_ch}, &p.bias));
  });
  std::map<std::string, bool> seen;

  while (!r.done()) {
    const std::uint32_t name_len = r.u32("record name length");
    r.need(name_len, "record name");
    std::string name(reinterpret_cast<const char*>(r.data + r.pos), name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32("record rank");
    if (rank > 8) {
      throw FormatError("weights file " + origin + " record " + name +
                        " has absurd rank");
    }
    std::vector<int> dims;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      dims.push_back(static_cast<int>(r.u32("record dims")));
      n *= static_cast<std::size_t>(dims.back());
    }
    auto it = expect.find(name);
    if (it == expect.end()) {
      throw IncompatibilityError("weights file " + origin +
                                 " has unexpected record '" + name + "'");
    }
    if (seen.count(name) != 0) {
      throw IncompatibilityError("weights file " + origin +
                                 " has duplicate record '" + name + "'");
    }
    if (dims != it->second.first) {
      throw IncompatibilityError("weights file " + origin + " record '" + name +
                                 "' has wrong shape for the embedded config");
    }
    std::vector<float>& dst = *it->second.second;
    r.need(n * 4, "record payload");
    for (std::size_t i = 0; i < n; ++i) dst[i] = r.f32("record payload");
    seen[name] = true;
  }
  for (const auto& [name, target] : expect) {
    if (seen.count(name) == 0) {
      throw IncompatibilityError("weights file " + origin + " is missing record '" +
                                 name + "'");
    }
  }
  return out;
}

inline void save_weights(const std::string& path, const ModelWeights& weights,
                         const ModelConfig& cfg) {
  const std::vector<std::uint8_t> bytes = encode_weights(weights, cfg);
  detail::atomic_write_file(path, bytes.data(), bytes.size());
}

inline LoadedWeights load_weights(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  if (bytes.empty()) throw FormatError("weights file " + path + " is empty");
  return decode_weights(bytes, path);
}

}  // namespace ipl
