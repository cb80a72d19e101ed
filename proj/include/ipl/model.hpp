#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "ipl/autodiff.hpp"
#include "ipl/cache.hpp"
#include "ipl/ops.hpp"
#include "ipl/tensor.hpp"

namespace ipl {

// Eq. (3) reads F_LFE = F_m (.) F_w; the surrounding prose reads
// "the input features are adjusted according to these weights".
enum class LfeMode { kEq3, kText };

struct ModelConfig {
  int num_fibs = 8;
  int channels = 48;
  int downsample = 2;  // sub-pixel factor r
  int chunk_c = 16;
  int chunk_w = 64;
  int chunk_h = 64;
  int drtm_w = 64;
  int drtm_h = 64;
  int lfe_reduction = 4;
  bool cache_enabled = true;
  std::uint64_t cache_bytes = 512ull << 20;
  int q_bits = 8;
  LfeMode lfe_mode = LfeMode::kEq3;
  bool global_residual = true;  // F_f = F_0 + F_N (vs plain F_N)
  bool use_daem = true;         // ablation switches
  bool use_drtm = true;
  bool bypass_activations = false;  // test mode: linear network

  int channel_block() const { return std::min(chunk_c, channels); }
  int q_min() const { return 0; }
  int q_max() const { return (1 << q_bits) - 1; }

  void validate() const {
    if (num_fibs < 1 || channels < 1 || downsample < 1 || chunk_c < 1 ||
        chunk_w < 1 || chunk_h < 1 || drtm_w < 1 || drtm_h < 1 ||
        lfe_reduction < 1) {
      throw ValueError("model config counts must all be >= 1");
    }
    if (channels % lfe_reduction != 0) {
      throw ValueError("channels " + std::to_string(channels) +
                       " not divisible by lfe_reduction " +
                       std::to_string(lfe_reduction));
    }
    if (channels % channel_block() != 0) {
      throw ValueError("channels " + std::to_string(channels) +
                       " not divisible by channel chunk " +
                       std::to_string(channel_block()) +
                       " (channel-branch weights are shaped to the block)");
    }
    if (q_bits < 1 || q_bits > 8) {
      throw ValueError("q_bits must be in [1,8], got " + std::to_string(q_bits));
    }
  }
};

template <typename T>
struct LfeWeightsT {
  ConvParamsT<T> reduce;
  ConvParamsT<T> expand;
};

template <typename T>
struct DrtmWeightsT {
  ConvParamsT<T> mix_c;
  ConvParamsT<T> mix_w;
  ConvParamsT<T> mix_h;
};

template <typename T>
struct FibWeightsT {
  LfeWeightsT<T> lfe_c;
  LfeWeightsT<T> lfe_w;
  LfeWeightsT<T> lfe_h;
  DrtmWeightsT<T> drtm;
};

template <typename T>
struct ModelWeightsT {
  ConvParamsT<T> down;
  ConvParamsT<T> up;
  std::vector<FibWeightsT<T>> fibs;

  template <typename F>
  void for_each_param(F&& fn) {
    fn("down", down);
    for (std::size_t i = 0; i < fibs.size(); ++i) {
      const std::string p = "fib" + std::to_string(i);
      fn(p + ".lfe_c.reduce", fibs[i].lfe_c.reduce);
      fn(p + ".lfe_c.expand", fibs[i].lfe_c.expand);
      fn(p + ".lfe_w.reduce", fibs[i].lfe_w.reduce);
      fn(p + ".lfe_w.expand", fibs[i].lfe_w.expand);
      fn(p + ".lfe_h.reduce", fibs[i].lfe_h.reduce);
      fn(p + ".lfe_h.expand", fibs[i].lfe_h.expand);
      fn(p + ".drtm.mix_c", fibs[i].drtm.mix_c);
      fn(p + ".drtm.mix_w", fibs[i].drtm.mix_w);
      fn(p + ".drtm.mix_h", fibs[i].drtm.mix_h);
    }
    fn("up", up);
  }
  template <typename F>
  void for_each_param(F&& fn) const {
    const_cast<ModelWeightsT*>(this)->for_each_param(
        [&](const std::string& n, ConvParamsT<T>& p) {
          fn(n, const_cast<const ConvParamsT<T>&>(p));
        });
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for_each_param([&](const std::string&, const ConvParamsT<T>& p) {
      n += static_cast<std::int64_t>(p.weight.size() + p.bias.size());
    });
    return n;
  }

  template <typename U>
  ModelWeightsT<U> cast() const {
    ModelWeightsT<U> out;
    out.down = down.template cast<U>();
    out.up = up.template cast<U>();
    for (const auto& f : fibs) {
      FibWeightsT<U> g;
      g.lfe_c = {f.lfe_c.reduce.template cast<U>(), f.lfe_c.expand.template cast<U>()};
      g.lfe_w = {f.lfe_w.reduce.template cast<U>(), f.lfe_w.expand.template cast<U>()};
      g.lfe_h = {f.lfe_h.reduce.template cast<U>(), f.lfe_h.expand.template cast<U>()};
      g.drtm = {f.drtm.mix_c.template cast<U>(), f.drtm.mix_w.template cast<U>(),
                f.drtm.mix_h.template cast<U>()};
      out.fibs.push_back(std::move(g));
    }
    return out;
  }
};

using LfeWeights = LfeWeightsT<float>;
using DrtmWeights = DrtmWeightsT<float>;
using FibWeights = FibWeightsT<float>;
using ModelWeights = ModelWeightsT<float>;

inline int lfe_reduced_channels(int block_channels, int reduction) {
  return std::max(1, block_channels / reduction);
}

inline ModelWeights make_zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  const int C = cfg.channels;
  const int r = cfg.downsample;
  ModelWeights w;
  w.down = ConvParams::zeros(C, 9 * r * r, 3);
  w.up = ConvParams::zeros(3 * r * r, C, 3);
  const int cb = cfg.channel_block();
  const int red_c = lfe_reduced_channels(cb, cfg.lfe_reduction);
  const int red_s = lfe_reduced_channels(C, cfg.lfe_reduction);
  for (int i = 0; i < cfg.num_fibs; ++i) {
    FibWeights f;
    f.lfe_c = {ConvParams::zeros(red_c, cb, 1), ConvParams::zeros(cb, red_c, 1)};
    f.lfe_w = {ConvParams::zeros(red_s, C, 1), ConvParams::zeros(C, red_s, 1)};
    f.lfe_h = {ConvParams::zeros(red_s, C, 1), ConvParams::zeros(C, red_s, 1)};
    f.drtm = {ConvParams::zeros(C, C, 1), ConvParams::zeros(cfg.drtm_w, cfg.drtm_w, 1),
              ConvParams::zeros(cfg.drtm_h, cfg.drtm_h, 1)};
    w.fibs.push_back(std::move(f));
  }
  return w;
}

namespace detail {

// mt19937 outputs mapped to [0,1) directly; std::uniform_real_distribution
// is not pinned across library versions.
class SeededUniform {
 public:
  explicit SeededUniform(std::uint32_t seed) : rng_(seed) {}
  float unit() { return static_cast<float>(rng_() >> 8) * (1.f / 16777216.f); }
  float symmetric(float limit) { return (2.f * unit() - 1.f) * limit; }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

 private:
  std::mt19937 rng_;
};

}  // namespace detail

// He-uniform fan-in init for conv weights, zero biases; one rng stream in
// parameter order, fully determined by seed.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint32_t seed) {
  ModelWeights w = make_zero_weights(cfg);
  detail::SeededUniform rng(seed);
  w.for_each_param([&](const std::string&, ConvParams& p) {
    const float limit = std::sqrt(6.f / (static_cast<float>(p.in_ch) * p.k * p.k));
    for (float& v : p.weight) v = rng.symmetric(limit);
  });
  return w;
}

// Three registered frames, low/mid/high exposure; x2 is the reference.
struct ExposureTriplet {
  Tensor3 x1;
  Tensor3 x2;
  Tensor3 x3;

  void validate(int downsample) const {
    for (const Tensor3* t : {&x1, &x2, &x3}) {
      if (t->c() != 3) {
        throw ShapeError("exposure frame must have 3 channels, got " +
                         t->shape().str());
      }
      if (t->shape() != x1.shape()) {
        throw ShapeError("exposure frames differ in size: " + x1.shape().str() +
                         " vs " + t->shape().str());
      }
    }
    if (x1.w() % downsample != 0 || x1.h() % downsample != 0) {
      throw ShapeError("frame size " + x1.shape().str() +
                       " not divisible by downsample factor " +
                       std::to_string(downsample));
    }
  }
};

// ---------------------------------------------------------------------------
// Forward evaluation contexts. The model body below is written once over a
// context: EvalContextT computes plain values (optionally through the
// attention cache); TapeContext records for reverse-mode training.

template <typename T>
struct EvalContextT {
  static constexpr bool kRecords = false;
  using S = T;
  using V = Tensor3T<T>;

  AttentionCache* cache = nullptr;  // honored only for the float context
  int q_min = 0;
  int q_max = 255;
  std::uint64_t lfe_evals = 0;

  Shape3 shape(const V& v) const { return v.shape(); }
  V conv(const V& x, const ConvParamsT<T>& p, const std::string&) {
    return ipl::conv(x, p);
  }
  V gap(const V& x) { return ipl::gap(x); }
  V activation(const V& x, Act k) { return ipl::activation(x, k); }
  V permute_roll(const V& x) { return ipl::permute_roll(x); }
  V interpolate(const V& x, int w, int h) { return ipl::interpolate_bilinear(x, w, h); }
  V pixel_unshuffle(const V& x, int r) { return ipl::pixel_unshuffle(x, r); }
  V pixel_shuffle(const V& x, int r) { return ipl::pixel_shuffle(x, r); }
  V add(const V& a, const V& b) { return ipl::add(a, b); }
  V mul(const V& a, const V& b) { return ipl::mul(a, b); }
};

using EvalContext = EvalContextT<float>;

struct TapeContext {
  static constexpr bool kRecords = true;
  using S = float;
  using V = Var;

  Tape* tape = nullptr;
  std::uint64_t lfe_evals = 0;

  Shape3 shape(const V& v) const { return tape->value(v).shape(); }
  V conv(const V& x, const ConvParams& p, const std::string& name) {
    return tape->conv(x, p, name);
  }
  V gap(const V& x) { return tape->gap(x); }
  V activation(const V& x, Act k) { return tape->activation(x, k); }
  V permute_roll(const V& x) { return tape->permute_roll(x); }
  V interpolate(const V& x, int w, int h) { return tape->interpolate(x, w, h); }
  V pixel_unshuffle(const V& x, int r) { return tape->pixel_unshuffle(x, r); }
  V pixel_shuffle(const V& x, int r) { return tape->pixel_shuffle(x, r); }
  V add(const V& a, const V& b) { return tape->add(a, b); }
  V mul(const V& a, const V& b) { return tape->mul(a, b); }
};

template <typename Cx>
typename Cx::V maybe_act(Cx& cx, const typename Cx::V& x, Act kind,
                         const ModelConfig& cfg) {
  if (cfg.bypass_activations) return x;
  return cx.activation(x, kind);
}

// Eqs. (1)-(3): F_m = GAP(F_in); F_w = Sigmoid(Conv(ReLU(Conv(F_in)))).
template <typename Cx>
typename Cx::V lfe_forward(Cx& cx, const typename Cx::V& block,
                           const LfeWeightsT<typename Cx::S>& w,
                           const std::string& prefix, const ModelConfig& cfg) {
  ++cx.lfe_evals;
  auto fm = cx.gap(block);
  auto a = cx.conv(block, w.reduce, prefix + ".reduce");
  a = maybe_act(cx, a, Act::kRelu, cfg);
  a = cx.conv(a, w.expand, prefix + ".expand");
  auto fw = maybe_act(cx, a, Act::kSigmoid, cfg);
  if (cfg.lfe_mode == LfeMode::kEq3) return cx.mul(fw, fm);
  return cx.mul(block, fw);
}

namespace detail {

struct ScanBranch {
  int axis;
  DimTag tag;
  const char* name;
};

inline constexpr ScanBranch kScanBranches[3] = {
    {0, DimTag::kChannel, ".lfe_c"},
    {1, DimTag::kWidth, ".lfe_w"},
    {2, DimTag::kHeight, ".lfe_h"},
};

}  // namespace detail

// Chunk the features along channel/width/height, run the branch-shared LFE
// over every block (through the cache when enabled), reassemble in place,
// and sum the three branch outputs.
template <typename Cx>
typename Cx::V slice_cyclic_scan(Cx& cx, const typename Cx::V& features,
                                 const FibWeightsT<typename Cx::S>& w,
                                 const ModelConfig& cfg, const std::string& prefix) {
  const Shape3 s = cx.shape(features);
  const int chunks[3] = {cfg.channel_block(), cfg.chunk_w, cfg.chunk_h};
  const LfeWeightsT<typename Cx::S>* weights[3] = {&w.lfe_c, &w.lfe_w, &w.lfe_h};

  if constexpr (Cx::kRecords) {
    Var total{};
    for (int b = 0; b < 3; ++b) {
      const auto& br = detail::kScanBranches[b];
      const int total_len = br.axis == 0 ? s.c : br.axis == 1 ? s.w : s.h;
      std::vector<Var> parts;
      for (const BlockSpan& span : partition_axis(total_len, chunks[b])) {
        Var block = cx.tape->slice(features, br.axis, span.start, span.len);
        parts.push_back(lfe_forward(cx, block, *weights[b], prefix + br.name, cfg));
      }
      Var branch = cx.tape->concat(parts, br.axis);
      total = b == 0 ? branch : cx.add(total, branch);
    }
    return total;
  } else {
    using V = typename Cx::V;
    V acc(s, typename Cx::S(0));
    for (int b = 0; b < 3; ++b) {
      const auto& br = detail::kScanBranches[b];
      const int total_len = br.axis == 0 ? s.c : br.axis == 1 ? s.w : s.h;
      for (const BlockSpan& span : partition_axis(total_len, chunks[b])) {
        V block = slice_axis(features, br.axis, span.start, span.len);
        V out;
        bool used_cache = false;
        if constexpr (std::is_same_v<typename Cx::S, float>) {
          if (cx.cache != nullptr && cx.cache->enabled()) {
            out = cx.cache->memoized_lfe(block, br.tag, [&](const Tensor3& blk) {
              return lfe_forward(cx, blk, *weights[b], prefix + br.name, cfg);
            });
            used_cache = true;
          }
        }
        if (!used_cache) {
          out = lfe_forward(cx, block, *weights[b], prefix + br.name, cfg);
        }
        paste_axis_add(acc, out, br.axis, span.start);
      }
    }
    return acc;
  }
}

// Eqs. (10)-(12): resize to the fixed internal resolution, three rounds of
// conv1x1 + GELU + cyclic roll (mixing C, then W', then H'), resize back,
// and modulate the input elementwise.
template <typename Cx>
typename Cx::V drtm_forward(Cx& cx, const typename Cx::V& features,
                            const DrtmWeightsT<typename Cx::S>& w,
                            const ModelConfig& cfg, const std::string& prefix) {
  const Shape3 s = cx.shape(features);
  auto t = cx.interpolate(features, cfg.drtm_w, cfg.drtm_h);
  t = cx.permute_roll(maybe_act(cx, cx.conv(t, w.mix_c, prefix + ".mix_c"), Act::kGelu, cfg));
  t = cx.permute_roll(maybe_act(cx, cx.conv(t, w.mix_w, prefix + ".mix_w"), Act::kGelu, cfg));
  t = cx.permute_roll(maybe_act(cx, cx.conv(t, w.mix_h, prefix + ".mix_h"), Act::kGelu, cfg));
  auto att = cx.interpolate(t, s.w, s.h);
  return cx.mul(features, att);
}

// Eqs. (13)-(14): F_out = F_DAEM + DRTM(F_DAEM).
template <typename Cx>
typename Cx::V fib_forward(Cx& cx, const typename Cx::V& features,
                           const FibWeightsT<typename Cx::S>& w,
                           const ModelConfig& cfg, const std::string& prefix) {
  auto daem = cfg.use_daem ? slice_cyclic_scan(cx, features, w, cfg, prefix)
                           : features;
  if (!cfg.use_drtm) return daem;
  auto mod = drtm_forward(cx, daem, w.drtm, cfg, prefix + ".drtm");
  return cx.add(daem, mod);
}

// DownSampler -> FIB chain -> UpSampler on the concatenated exposures;
// the caller multiplies by x2 and clamps.
template <typename Cx>
typename Cx::V model_core(Cx& cx, const typename Cx::V& x_cat,
                          const ModelWeightsT<typename Cx::S>& weights,
                          const ModelConfig& cfg) {
  auto u = cx.pixel_unshuffle(x_cat, cfg.downsample);
  auto f0 = cx.conv(u, weights.down, "down");
  if constexpr (!Cx::kRecords) u.release();
  auto f = f0;
  for (int i = 0; i < cfg.num_fibs; ++i) {
    f = fib_forward(cx, f, weights.fibs[i], cfg, "fib" + std::to_string(i));
  }
  auto ff = cfg.global_residual ? cx.add(f0, f) : f;
  if constexpr (!Cx::kRecords) {
    f0.release();
    f.release();
  }
  auto up = cx.conv(ff, weights.up, "up");
  if constexpr (!Cx::kRecords) ff.release();
  return cx.pixel_shuffle(up, cfg.downsample);
}

struct ForwardStats {
  std::uint64_t lfe_evals = 0;
};

// Full fusion: Y = clamp(UpSampler(F_f) (.) X_2, 0, 1).
template <typename T>
Tensor3T<T> fuse_triplet_t(const ExposureTriplet& triplet,
                           const ModelWeightsT<T>& weights, const ModelConfig& cfg,
                           AttentionCache* cache = nullptr,
                           ForwardStats* stats = nullptr) {
  cfg.validate();
  triplet.validate(cfg.downsample);
  EvalContextT<T> cx;
  cx.cache = cfg.cache_enabled ? cache : nullptr;
  cx.q_min = cfg.q_min();
  cx.q_max = cfg.q_max();
  Tensor3T<T> x1t, x2t, x3t;
  const Tensor3T<T>* frames[3];
  if constexpr (std::is_same_v<T, float>) {
    frames[0] = &triplet.x1;
    frames[1] = &triplet.x2;
    frames[2] = &triplet.x3;
  } else {
    x1t = triplet.x1.template cast<T>();
    x2t = triplet.x2.template cast<T>();
    x3t = triplet.x3.template cast<T>();
    frames[0] = &x1t;
    frames[1] = &x2t;
    frames[2] = &x3t;
  }
  Tensor3T<T> x_cat = concat_channels<T>({frames[0], frames[1], frames[2]});
  Tensor3T<T> net = model_core(cx, x_cat, weights, cfg);
  x_cat.release();
  Tensor3T<T> fused = clamp01(mul(net, *frames[1]));
  if (stats != nullptr) stats->lfe_evals = cx.lfe_evals;
  return fused;
}

inline Tensor3 fuse_triplet(const ExposureTriplet& triplet, const ModelWeights& weights,
                            const ModelConfig& cfg, AttentionCache* cache = nullptr,
                            ForwardStats* stats = nullptr) {
  return fuse_triplet_t<float>(triplet, weights, cfg, cache, stats);
}

// Tape twin of fuse_triplet; returns the fused output var (pre-loss).
struct LabeledTriplet {
  ExposureTriplet input;
  Tensor3 gt;
};

inline Var fuse_on_tape(Tape& tape, const ExposureTriplet& triplet,
                        const ModelWeights& weights, const ModelConfig& cfg,
                        bool with_clamp = true) {
  cfg.validate();
  triplet.validate(cfg.downsample);
  TapeContext cx;
  cx.tape = &tape;
  Var x_cat = tape.leaf(
      concat_channels<float>({&triplet.x1, &triplet.x2, &triplet.x3}));
  Var net = model_core(cx, x_cat, weights, cfg);
  Var fused = tape.mul(net, tape.leaf(triplet.x2));
  return with_clamp ? tape.clamp01(fused) : fused;
}

}  // namespace ipl
