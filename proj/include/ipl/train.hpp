#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ipl/autodiff.hpp"
#include "ipl/model.hpp"

namespace ipl {

class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Optimizer { kAdamW, kSgd };

struct TrainConfig {
  float learning_rate = 2e-4f;
  int steps = 1;
  int batch_size = 4;
  std::uint32_t seed = 0;
  Optimizer optimizer = Optimizer::kAdamW;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;

  void validate() const {
    if (!(learning_rate > 0.f)) throw ValueError("learning rate must be > 0");
    if (steps < 1) throw ValueError("steps must be >= 1");
    if (batch_size < 1) throw ValueError("batch size must be >= 1");
  }
};

// Eq. (15) read as mean absolute error so the value is resolution-independent.
inline float l1_loss(const Tensor3& pred, const Tensor3& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1 shapes differ: " + pred.shape().str() + " vs " +
                     target.shape().str());
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    acc += std::abs(static_cast<double>(pred.data()[i]) - target.data()[i]);
  }
  return static_cast<float>(acc / pred.numel());
}

struct OptimizerState {
  int t = 0;
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
};

namespace detail {

inline void adamw_update(std::vector<float>& p, const std::vector<float>& g,
                         std::vector<float>& m, std::vector<float>& v, int t,
                         const TrainConfig& cfg) {
  const float bc1 = 1.f - std::pow(cfg.beta1, static_cast<float>(t));
  const float bc2 = 1.f - std::pow(cfg.beta2, static_cast<float>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.f - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.f - cfg.beta2) * g[i] * g[i];
    const float mhat = m[i] / bc1;
    const float vhat = v[i] / bc2;
    p[i] -= cfg.learning_rate *
            (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
  }
}

}  // namespace detail

inline void apply_gradients(ModelWeights& weights, const Gradients& grads,
                            const TrainConfig& cfg, OptimizerState& state) {
  state.t += 1;
  weights.for_each_param([&](const std::string& name, ConvParams& p) {
    for (const char* part : {".weight", ".bias"}) {
      const std::string key = name + part;
      std::vector<float>& dst = part[1] == 'w' ? p.weight : p.bias;
      const std::vector<float>& g = grads.at(key).data;
      if (cfg.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
          dst[i] -= cfg.learning_rate * g[i];
        }
        continue;
      }
      std::vector<float>& m =
          state.m.try_emplace(key, dst.size(), 0.f).first->second;
      std::vector<float>& v =
          state.v.try_emplace(key, dst.size(), 0.f).first->second;
      detail::adamw_update(dst, g, m, v, state.t, cfg);
    }
  });
}

// One optimizer step over a mini-batch: tape forward with the cache bypassed,
// vjp of the mean batch loss, parameter update.
inline float train_step(ModelWeights& weights,
                        const std::vector<const LabeledTriplet*>& batch,
                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                        OptimizerState& state, int step_index = 0) {
  if (batch.empty()) throw ValueError("train_step: empty batch");
  Tape tape;
  weights.for_each_param(
      [&](const std::string& name, const ConvParams& p) { tape.declare(name, p); });
  Var total{};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var fused = fuse_on_tape(tape, batch[i]->input, weights, model_cfg);
    Var item = tape.l1_mean(fused, batch[i]->gt);
    total = i == 0 ? item : tape.add(total, item);
  }
  Var loss = tape.scale(total, 1.f / static_cast<float>(batch.size()));
  const float loss_value = tape.value(loss).at(0, 0, 0);
  if (!std::isfinite(loss_value)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(step_index));
  }
  Gradients grads = tape.vjp_eval(loss, Tensor3(1, 1, 1, 1.f));
  apply_gradients(weights, grads, cfg, state);
  return loss_value;
}

namespace detail {

template <typename Rng>
void fisher_yates(std::vector<int>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace detail

struct TrainResult {
  ModelWeights weights;
  std::vector<float> losses;  // one entry per step
};

// Seeded epoch shuffles, fixed-size mini-batches wrapping across epochs.
inline TrainResult train_loop(const std::vector<LabeledTriplet>& dataset,
                              const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ValueError("train_loop: empty dataset");
  TrainResult result;
  result.weights = init_weights(model_cfg, cfg.seed);
  OptimizerState state;
  std::mt19937 rng(cfg.seed ^ 0x5eedu);
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::size_t cursor = order.size();
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const LabeledTriplet*> batch;
    while (batch.size() < static_cast<std::size_t>(cfg.batch_size)) {
      if (cursor == order.size()) {
        detail::fisher_yates(order, rng);
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }
    result.losses.push_back(
        train_step(result.weights, batch, model_cfg, cfg, state, step));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Whole-model gradient verification

inline ModelConfig grad_check_config() {
  ModelConfig cfg;
  cfg.num_fibs = 1;
  cfg.channels = 8;
  cfg.drtm_w = 8;
  cfg.drtm_h = 8;
  cfg.cache_enabled = false;
  return cfg;
}

namespace detail {

inline ExposureTriplet random_triplet(int w, int h, std::uint32_t seed) {
  SeededUniform rng(seed);
  ExposureTriplet t;
  for (Tensor3* f : {&t.x1, &t.x2, &t.x3}) {
    *f = Tensor3(3, w, h);
    for (std::int64_t i = 0; i < f->numel(); ++i) f->data()[i] = rng.unit();
  }
  return t;
}

// <pre-clamp fused output, probe> / numel, evaluated in double
inline double probe_loss_double(const ExposureTriplet& triplet,
                                const ModelWeightsT<double>& weights,
                                const ModelConfig& cfg, const Tensor3& probe) {
  EvalContextT<double> cx;
  Tensor3T<double> x1 = triplet.x1.cast<double>();
  Tensor3T<double> x2 = triplet.x2.cast<double>();
  Tensor3T<double> x3 = triplet.x3.cast<double>();
  Tensor3T<double> x_cat = concat_channels<double>({&x1, &x2, &x3});
  Tensor3T<double> net = model_core(cx, x_cat, weights, cfg);
  Tensor3T<double> fused = mul(net, x2);
  double acc = 0.0;
  for (std::int64_t i = 0; i < fused.numel(); ++i) {
    acc += fused.data()[i] * static_cast<double>(probe.data()[i]);
  }
  return acc / fused.numel();
}

}  // namespace detail

// Compares tape gradients of a 1-FIB model on an 8x8 input against central
// finite differences (h = 1e-3) over a random probe of parameter entries.
// The finite differences run on the double twin of the forward; the loss is
// a fixed random linear functional of the pre-clamp fused output.
inline double grad_check_model(std::uint32_t seed, bool linear_mode = false,
                               int probe_count = 64) {
  ModelConfig cfg = grad_check_config();
  cfg.bypass_activations = linear_mode;
  const ModelWeights weights = init_weights(cfg, seed);
  const ExposureTriplet triplet = detail::random_triplet(8, 8, seed + 101);

  detail::SeededUniform rng(seed + 202);
  Tensor3 probe(3, 8, 8);
  for (std::int64_t i = 0; i < probe.numel(); ++i) {
    probe.data()[i] = rng.symmetric(1.f);
  }

  Tape tape;
  weights.for_each_param(
      [&](const std::string& name, const ConvParams& p) { tape.declare(name, p); });
  Var fused = fuse_on_tape(tape, triplet, weights, cfg, /*with_clamp=*/false);
  Tensor3 cot = probe;
  const float inv_n = 1.f / static_cast<float>(cot.numel());
  for (std::int64_t i = 0; i < cot.numel(); ++i) cot.data()[i] *= inv_n;
  const Gradients grads = tape.vjp_eval(fused, cot);

  ModelWeightsT<double> wd = weights.cast<double>();
  std::vector<std::pair<std::string, double*>> slots;
  std::vector<std::size_t> sizes;
  wd.for_each_param([&](const std::string& name, ConvParamsT<double>& p) {
    slots.emplace_back(name + ".weight", p.weight.data());
    sizes.push_back(p.weight.size());
    slots.emplace_back(name + ".bias", p.bias.data());
    sizes.push_back(p.bias.size());
  });

  const double h = 1e-3;
  double worst = 0.0;
  for (int k = 0; k < probe_count; ++k) {
    const std::size_t slot = rng.index(slots.size());
    if (sizes[slot] == 0) continue;
    const std::size_t elem = rng.index(sizes[slot]);
    double* target = slots[slot].second + elem;
    const double saved = *target;
    *target = saved + h;
    const double fp = detail::probe_loss_double(triplet, wd, cfg, probe);
    *target = saved - h;
    const double fm = detail::probe_loss_double(triplet, wd, cfg, probe);
    *target = saved;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = grads.at(slots[slot].first).data[elem];
    const double err =
        std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ipl
