#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ipl/model.hpp"
#include "ipl/tensor.hpp"

namespace ipl {

// Procedural dynamic multi-exposure scene: an HDR radiance field (smooth
// gradient background plus bright/dark rectangles and discs) rendered at
// three exposure offsets, with the foreground rigidly displaced per frame.
// Frame 2 is the reference instant; displacement is rounded to whole pixels
// so the three frames share one radiance histogram.
struct SceneSpec {
  int w = 64;
  int h = 64;
  std::uint32_t seed = 0;
  int num_shapes = 6;
  float motion_dx = 2.f;
  float motion_dy = 1.f;
  std::array<float, 3> ev_offsets = {-2.f, 0.f, 2.f};
  float gamma = 2.2f;

  void validate() const {
    if (w < 16 || h < 16) {
      throw ValueError("scene must be at least 16x16, got " + std::to_string(w) +
                       "x" + std::to_string(h));
    }
    const float mag = std::hypot(motion_dx, motion_dy);
    if (!(mag < std::min(w, h) / 4.f)) {
      throw ValueError("motion magnitude must stay below min(W,H)/4");
    }
    if (!(ev_offsets[0] < ev_offsets[1] && ev_offsets[1] < ev_offsets[2])) {
      throw ValueError("ev offsets must be strictly increasing");
    }
    if (!(gamma > 0.f)) throw ValueError("gamma must be > 0");
    if (num_shapes < 0) throw ValueError("num_shapes must be >= 0");
  }
};

namespace detail {

struct SynthShape {
  bool disc = false;
  float cx = 0, cy = 0;  // center at the reference instant
  float sx = 0, sy = 0;  // half extents (disc uses sx as radius)
  float radiance[3] = {0, 0, 0};
};

class RadianceField {
 public:
  RadianceField(const SceneSpec& spec, std::uint32_t seed) : spec_(spec) {
    SeededUniform rng(seed);
    for (int c = 0; c < 3; ++c) {
      base_[c] = 0.15f + 0.3f * rng.unit();
      gx_[c] = rng.symmetric(0.12f);
      gy_[c] = rng.symmetric(0.12f);
    }
    const float span = static_cast<float>(std::min(spec.w, spec.h));
    const float pad = std::ceil(std::max(std::abs(spec.motion_dx),
                                         std::abs(spec.motion_dy))) + 1.f;
    for (int i = 0; i < spec.num_shapes; ++i) {
      SynthShape s;
      s.disc = rng.unit() < 0.5f;
      s.sx = span / 16.f + rng.unit() * span / 8.f;
      s.sy = s.disc ? s.sx : span / 16.f + rng.unit() * span / 8.f;
      const float mx = s.sx + pad, my = s.sy + pad;
      s.cx = mx + rng.unit() * std::max(1.f, spec.w - 2 * mx);
      s.cy = my + rng.unit() * std::max(1.f, spec.h - 2 * my);
      const bool bright = rng.unit() < 0.6f;
      for (int c = 0; c < 3; ++c) {
        s.radiance[c] = bright ? 1.2f + 2.8f * rng.unit() : 0.02f + 0.12f * rng.unit();
      }
      shapes_.push_back(s);
    }
  }

  // radiance at pixel (x, y) with the foreground displaced by (dx, dy)
  float sample(int c, int x, int y, int dx, int dy) const {
    float v = base_[c] + gx_[c] * (static_cast<float>(x) / spec_.w) +
              gy_[c] * (static_cast<float>(y) / spec_.h);
    for (const SynthShape& s : shapes_) {
      const float rx = static_cast<float>(x) - (s.cx + dx);
      const float ry = static_cast<float>(y) - (s.cy + dy);
      const bool inside = s.disc ? rx * rx + ry * ry <= s.sx * s.sx
                                 : std::abs(rx) <= s.sx && std::abs(ry) <= s.sy;
      if (inside) v = s.radiance[c];
    }
    return v;
  }

 private:
  SceneSpec spec_;
  float base_[3];
  float gx_[3];
  float gy_[3];
  std::vector<SynthShape> shapes_;
};

}  // namespace detail

// frame_i = clamp(radiance_i * 2^{ev_i}, 0, 1)^(1/gamma); the ground truth
// is the reference-instant radiance rendered at ev 0.
inline LabeledTriplet synth_triplet(const SceneSpec& spec) {
  spec.validate();
  detail::RadianceField field(spec, spec.seed * 2654435761u + 17u);
  const float inv_gamma = 1.f / spec.gamma;
  auto render = [&](int frame, float ev) {
    const int dx = static_cast<int>(std::lround((frame - 1) * spec.motion_dx));
    const int dy = static_cast<int>(std::lround((frame - 1) * spec.motion_dy));
    const float gain = std::exp2(ev);
    Tensor3 img(3, spec.w, spec.h);
    for (int c = 0; c < 3; ++c) {
      for (int x = 0; x < spec.w; ++x) {
        float* row = img.row(c, x);
        for (int y = 0; y < spec.h; ++y) {
          const float lin = std::min(1.f, std::max(0.f, field.sample(c, x, y, dx, dy) * gain));
          row[y] = std::pow(lin, inv_gamma);
        }
      }
    }
    return img;
  };
  LabeledTriplet out;
  out.input.x1 = render(0, spec.ev_offsets[0]);
  out.input.x2 = render(1, spec.ev_offsets[1]);
  out.input.x3 = render(2, spec.ev_offsets[2]);
  out.gt = render(1, 0.f);
  return out;
}

}  // namespace ipl
