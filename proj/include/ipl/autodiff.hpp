#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ipl/ops.hpp"
#include "ipl/tensor.hpp"

namespace ipl {

struct GradTensor {
  std::vector<int> dims;
  std::vector<float> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
  }
};

// Parameter identifier -> dL/dparameter, same shape as the parameter.
// Declared-but-unused parameters stay exactly zero.
using Gradients = std::map<std::string, GradTensor>;

// Reverse-mode tape over Tensor3 values. Forward calls record one node per
// op; vjp_eval seeds a cotangent at one node and walks the tape backwards.
// Recording is single-threaded by contract.
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  const Tensor3& value(Var v) const { return nodes_[check(v)].value; }

  void declare(const std::string& name, std::vector<int> dims) {
    declared_.emplace(name, std::move(dims));
  }
  void declare(const std::string& name, const ConvParams& p) {
    declare(name + ".weight", std::vector<int>{p.out_ch, p.in_ch, p.k, p.k});
    declare(name + ".bias", std::vector<int>{p.out_ch});
  }

  // Leaf value; a named leaf reports its gradient in vjp_eval results.
  Var leaf(Tensor3 t, const std::string& name = "") {
    const Var v = push(std::move(t), {});
    if (!name.empty()) {
      const Shape3 s = nodes_[v.id].value.shape();
      declare(name, std::vector<int>{s.c, s.w, s.h});
      named_leaves_.emplace_back(name, v.id);
    }
    return v;
  }

  Var conv(Var x, const ConvParams& p, const std::string& pname = "") {
    Tensor3 out = ipl::conv(value(x), p);
    if (!pname.empty()) declare(pname, p);
    const int xid = x.id;
    return push(std::move(out), [xid, p, pname](Tape& t, const Tensor3& g) {
      t.conv_backward(xid, p, pname, g);
    });
  }

  Var gap(Var x) {
    Tensor3 out = ipl::gap(value(x));
    const int xid = x.id;
    return push(std::move(out), [xid](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      const std::int64_t plane = static_cast<std::int64_t>(dx.w()) * dx.h();
      for (int c = 0; c < dx.c(); ++c) {
        const float gv = g.at(c, 0, 0) / static_cast<float>(plane);
        float* row = dx.row(c, 0);
        for (std::int64_t i = 0; i < plane; ++i) row[i] += gv;
      }
    });
  }

  Var activation(Var x, Act kind) {
    Tensor3 out = ipl::activation(value(x), kind);
    const int xid = x.id;
    return push(std::move(out), [xid, kind](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      const Tensor3& xv = t.nodes_[xid].value;
      for (std::int64_t i = 0; i < dx.numel(); ++i) {
        dx.data()[i] += detail::act_grad(xv.data()[i], kind) * g.data()[i];
      }
    });
  }

  Var permute_roll(Var x) {
    Tensor3 out = ipl::permute_roll(value(x));
    const int xid = x.id;
    return push(std::move(out), [xid](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      for (int c = 0; c < dx.c(); ++c) {
        for (int w = 0; w < dx.w(); ++w) {
          float* row = dx.row(c, w);
          for (int h = 0; h < dx.h(); ++h) row[h] += g.at(w, h, c);
        }
      }
    });
  }

  Var interpolate(Var x, int out_w, int out_h) {
    Tensor3 out = ipl::interpolate_bilinear(value(x), out_w, out_h);
    const int xid = x.id;
    return push(std::move(out), [xid](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      if (g.shape() == dx.shape()) {
        add_inplace(dx, g);
        return;
      }
      for (int c = 0; c < g.c(); ++c) {
        for (int w = 0; w < g.w(); ++w) {
          int wlo, whi;
          double wf;
          detail::bilinear_axis(w, dx.w(), g.w(), wlo, whi, wf);
          const float* grow = g.row(c, w);
          for (int h = 0; h < g.h(); ++h) {
            int hlo, hhi;
            double hf;
            detail::bilinear_axis(h, dx.h(), g.h(), hlo, hhi, hf);
            const float gv = grow[h];
            dx.at(c, wlo, hlo) += static_cast<float>((1 - wf) * (1 - hf)) * gv;
            dx.at(c, wlo, hhi) += static_cast<float>((1 - wf) * hf) * gv;
            dx.at(c, whi, hlo) += static_cast<float>(wf * (1 - hf)) * gv;
            dx.at(c, whi, hhi) += static_cast<float>(wf * hf) * gv;
          }
        }
      }
    });
  }

  Var pixel_unshuffle(Var x, int r) {
    Tensor3 out = ipl::pixel_unshuffle(value(x), r);
    const int xid = x.id;
    return push(std::move(out), [xid, r](Tape& t, const Tensor3& g) {
      add_inplace(t.grad_buf(xid), ipl::pixel_shuffle(g, r));
    });
  }

  Var pixel_shuffle(Var x, int r) {
    Tensor3 out = ipl::pixel_shuffle(value(x), r);
    const int xid = x.id;
    return push(std::move(out), [xid, r](Tape& t, const Tensor3& g) {
      add_inplace(t.grad_buf(xid), ipl::pixel_unshuffle(g, r));
    });
  }

  Var add(Var a, Var b) {
    Tensor3 out = ipl::add(value(a), value(b));
    const int aid = a.id, bid = b.id;
    return push(std::move(out), [aid, bid](Tape& t, const Tensor3& g) {
      add_inplace(t.grad_buf(aid), g);
      t.accum_maybe_reduced(bid, g);
    });
  }

  Var mul(Var a, Var b) {
    Tensor3 out = ipl::mul(value(a), value(b));
    const int aid = a.id, bid = b.id;
    return push(std::move(out), [aid, bid](Tape& t, const Tensor3& g) {
      const Tensor3& av = t.nodes_[aid].value;
      const Tensor3& bv = t.nodes_[bid].value;
      add_inplace(t.grad_buf(aid), ipl::mul(g, bv));
      t.accum_maybe_reduced(bid, ipl::mul(g, av));
    });
  }

  Var slice(Var x, int axis, int start, int len) {
    Tensor3 out = slice_axis(value(x), axis, start, len);
    const int xid = x.id;
    return push(std::move(out), [xid, axis, start](Tape& t, const Tensor3& g) {
      paste_axis_add(t.grad_buf(xid), g, axis, start);
    });
  }

  Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero vars");
    if (parts.size() == 1) return parts[0];
    Shape3 s = value(parts[0]).shape();
    std::vector<int> offsets;
    int total = 0;
    for (Var p : parts) {
      const Shape3 ps = value(p).shape();
      offsets.push_back(total);
      total += axis == 0 ? ps.c : axis == 1 ? ps.w : ps.h;
    }
    (axis == 0 ? s.c : axis == 1 ? s.w : s.h) = total;
    Tensor3 out(s, 0.f);
    std::vector<int> ids;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      paste_axis_add(out, value(parts[i]), axis, offsets[i]);
      ids.push_back(parts[i].id);
    }
    return push(std::move(out), [ids, offsets, axis](Tape& t, const Tensor3& g) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const Shape3 ps = t.nodes_[ids[i]].value.shape();
        const int len = axis == 0 ? ps.c : axis == 1 ? ps.w : ps.h;
        add_inplace(t.grad_buf(ids[i]), slice_axis(g, axis, offsets[i], len));
      }
    });
  }

  Var clamp01(Var x) {
    Tensor3 out = ipl::clamp01(value(x));
    const int xid = x.id;
    return push(std::move(out), [xid](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      const Tensor3& xv = t.nodes_[xid].value;
      for (std::int64_t i = 0; i < dx.numel(); ++i) {
        const float v = xv.data()[i];
        if (v >= 0.f && v <= 1.f) dx.data()[i] += g.data()[i];
      }
    });
  }

  Var sum(Var x) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < value(x).numel(); ++i) acc += value(x).data()[i];
    Tensor3 out(1, 1, 1);
    out.at(0, 0, 0) = static_cast<float>(acc);
    const int xid = x.id;
    return push(std::move(out), [xid](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      const float gv = g.at(0, 0, 0);
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx.data()[i] += gv;
    });
  }

  Var scale(Var x, float s) {
    Tensor3 out = value(x);
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] *= s;
    const int xid = x.id;
    return push(std::move(out), [xid, s](Tape& t, const Tensor3& g) {
      Tensor3& dx = t.grad_buf(xid);
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx.data()[i] += s * g.data()[i];
    });
  }

  // mean |pred - target| as a (1,1,1) scalar
  Var l1_mean(Var pred, Tensor3 target) {
    const Tensor3& pv = value(pred);
    if (pv.shape() != target.shape()) {
      throw ShapeError("l1 shapes differ: " + pv.shape().str() + " vs " +
                       target.shape().str());
    }
    double acc = 0.0;
    for (std::int64_t i = 0; i < pv.numel(); ++i) {
      acc += std::abs(static_cast<double>(pv.data()[i]) - target.data()[i]);
    }
    Tensor3 out(1, 1, 1);
    out.at(0, 0, 0) = static_cast<float>(acc / pv.numel());
    const int pid = pred.id;
    return push(std::move(out), [pid, target = std::move(target)](Tape& t,
                                                                  const Tensor3& g) {
      Tensor3& dp = t.grad_buf(pid);
      const Tensor3& pv = t.nodes_[pid].value;
      const float gv = g.at(0, 0, 0) / static_cast<float>(pv.numel());
      for (std::int64_t i = 0; i < dp.numel(); ++i) {
        const float d = pv.data()[i] - target.data()[i];
        dp.data()[i] += d > 0.f ? gv : d < 0.f ? -gv : 0.f;
      }
    });
  }

  // Seeds `seed` at `out`, walks the tape backwards, returns gradients for
  // every declared parameter and named leaf (zeros where unused).
  Gradients vjp_eval(Var out, const Tensor3& seed) {
    if (seed.shape() != value(out).shape()) {
      throw ShapeError("vjp seed shape " + seed.shape().str() +
                       " does not match output " + value(out).shape().str());
    }
    grads_.assign(nodes_.size(), Tensor3{});
    param_grads_.clear();
    for (const auto& [name, dims] : declared_) {
      GradTensor g;
      g.dims = dims;
      g.data.assign(static_cast<std::size_t>(g.numel()), 0.f);
      param_grads_.emplace(name, std::move(g));
    }
    grad_buf(out.id) = seed;
    for (int id = out.id; id >= 0; --id) {
      if (grads_[id].empty() || !nodes_[id].backward) continue;
      nodes_[id].backward(*this, grads_[id]);
    }
    for (const auto& [name, id] : named_leaves_) {
      if (grads_[id].empty()) continue;
      GradTensor& g = param_grads_.at(name);
      std::copy(grads_[id].data(), grads_[id].data() + grads_[id].numel(),
                g.data.begin());
    }
    Gradients result = std::move(param_grads_);
    grads_.clear();
    param_grads_.clear();
    return result;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor3 value;
    std::function<void(Tape&, const Tensor3&)> backward;
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw ValueError("var does not belong to this tape");
    }
    return v.id;
  }

  Var push(Tensor3 value, std::function<void(Tape&, const Tensor3&)> backward) {
    nodes_.push_back({std::move(value), std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Tensor3& grad_buf(int id) {
    if (grads_[id].empty()) {
      grads_[id] = Tensor3(nodes_[id].value.shape(), 0.f);
    }
    return grads_[id];
  }

  // g has the full (C,W,H) shape; the target node may be (C,1,1) broadcast.
  void accum_maybe_reduced(int id, const Tensor3& g) {
    Tensor3& dst = grad_buf(id);
    if (dst.shape() == g.shape()) {
      add_inplace(dst, g);
      return;
    }
    const std::int64_t plane = static_cast<std::int64_t>(g.w()) * g.h();
    for (int c = 0; c < g.c(); ++c) {
      double acc = 0.0;
      const float* row = g.row(c, 0);
      for (std::int64_t i = 0; i < plane; ++i) acc += row[i];
      dst.at(c, 0, 0) += static_cast<float>(acc);
    }
  }

  void conv_backward(int xid, const ConvParams& p, const std::string& pname,
                     const Tensor3& g) {
    const Tensor3& xv = nodes_[xid].value;
    Tensor3& dx = grad_buf(xid);
    float* dw = nullptr;
    float* db = nullptr;
    if (!pname.empty()) {
      dw = param_grads_.at(pname + ".weight").data.data();
      db = param_grads_.at(pname + ".bias").data.data();
    }
    const int W = xv.w(), H = xv.h();
    const int pad = p.k / 2;
    for (int oc = 0; oc < p.out_ch; ++oc) {
      const float* grow = g.row(oc, 0);
      if (db) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(W) * H; ++i) {
          acc += grow[i];
        }
        db[oc] += static_cast<float>(acc);
      }
      for (int ic = 0; ic < p.in_ch; ++ic) {
        for (int kh = 0; kh < p.k; ++kh) {
          for (int kw = 0; kw < p.k; ++kw) {
            const float wv = p.wt(oc, ic, kh, kw);
            double wacc = 0.0;
            for (int w = 0; w < W; ++w) {
              const int iw = w + kw - pad;
              if (iw < 0 || iw >= W) continue;
              const float* gr = g.row(oc, w);
              const float* xr = xv.row(ic, iw);
              float* dxr = dx.row(ic, iw);
              const int lo = std::max(0, pad - kh);
              const int hi = std::min(H, H + pad - kh);
              for (int h = lo; h < hi; ++h) {
                const float gv = gr[h];
                dxr[h + kh - pad] += wv * gv;
                if (dw) wacc += static_cast<double>(gv) * xr[h + kh - pad];
              }
            }
            if (dw) {
              dw[((static_cast<std::size_t>(oc) * p.in_ch + ic) * p.k + kh) * p.k +
                 kw] += static_cast<float>(wacc);
            }
          }
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor3> grads_;
  std::map<std::string, std::vector<int>> declared_;
  std::vector<std::pair<std::string, int>> named_leaves_;
  Gradients param_grads_;
};

using Var = Tape::Var;

// Worst relative error between `analytic` and central differences of `f`
// taken over every entry of `params`, with |a-b| / max(1e-8, |a|+|b|).
// `f` must read the current contents of `params`.
template <typename T>
double finite_diff_max_rel_error(const std::function<double()>& f, T* params,
                                 std::size_t n, const float* analytic,
                                 double h) {
  if (h <= 0) throw ValueError("finite difference step must be > 0");
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T saved = params[i];
    params[i] = saved + static_cast<T>(h);
    const double fp = f();
    params[i] = saved - static_cast<T>(h);
    const double fm = f();
    params[i] = saved;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ipl
