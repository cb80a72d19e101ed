#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ipl/tensor.hpp"

namespace ipl {

enum class Act { kRelu, kSigmoid, kGelu };

namespace detail {

template <typename T>
inline T apply_act(T x, Act kind) {
  switch (kind) {
    case Act::kRelu:
      return x > T(0) ? x : T(0);
    case Act::kSigmoid:
      return T(1) / (T(1) + std::exp(-x));
    case Act::kGelu:
      // exact Gaussian-CDF form x * Phi(x)
      return x * T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  }
  return x;
}

template <typename T>
inline T act_grad(T x, Act kind) {
  switch (kind) {
    case Act::kRelu:
      return x > T(0) ? T(1) : T(0);
    case Act::kSigmoid: {
      const T s = T(1) / (T(1) + std::exp(-x));
      return s * (T(1) - s);
    }
    case Act::kGelu: {
      const T phi = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
      const T pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
      return phi + x * pdf;
    }
  }
  return T(0);
}

}  // namespace detail

// Cross-correlation with bias; 1x1, or 3x3 with zero padding 1.
template <typename T>
Tensor3T<T> conv(const Tensor3T<T>& x, const ConvParamsT<T>& p) {
  p.validate();
  if (x.c() != p.in_ch) {
    throw ShapeError("conv input channels " + x.shape().str() +
                     " do not match weights (in=" + std::to_string(p.in_ch) +
                     ",out=" + std::to_string(p.out_ch) + ")");
  }
  const int W = x.w(), H = x.h();
  Tensor3T<T> out(p.out_ch, W, H);
  if (p.k == 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (out.numel() > (1 << 15))
#endif
    for (int oc = 0; oc < p.out_ch; ++oc) {
      T* orow = out.row(oc, 0);
      const std::int64_t plane = static_cast<std::int64_t>(W) * H;
      for (std::int64_t i = 0; i < plane; ++i) orow[i] = p.bias[oc];
      for (int ic = 0; ic < p.in_ch; ++ic) {
        const T wv = p.wt(oc, ic, 0, 0);
        const T* irow = x.row(ic, 0);
        for (std::int64_t i = 0; i < plane; ++i) orow[i] += wv * irow[i];
      }
    }
  } else {
    const int pad = p.k / 2;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (out.numel() > (1 << 15))
#endif
    for (int oc = 0; oc < p.out_ch; ++oc) {
      for (int w = 0; w < W; ++w) {
        T* orow = out.row(oc, w);
        for (int h = 0; h < H; ++h) orow[h] = p.bias[oc];
        for (int ic = 0; ic < p.in_ch; ++ic) {
          for (int kw = 0; kw < p.k; ++kw) {
            const int iw = w + kw - pad;
            if (iw < 0 || iw >= W) continue;
            const T* irow = x.row(ic, iw);
            for (int kh = 0; kh < p.k; ++kh) {
              const T wv = p.wt(oc, ic, kh, kw);
              const int lo = std::max(0, pad - kh);
              const int hi = std::min(H, H + pad - kh);
              for (int h = lo; h < hi; ++h) orow[h] += wv * irow[h + kh - pad];
            }
          }
        }
      }
    }
  }
  return out;
}

// Global average pooling to (C,1,1); accumulates in double per channel.
template <typename T>
Tensor3T<T> gap(const Tensor3T<T>& x) {
  Tensor3T<T> out(x.c(), 1, 1);
  const std::int64_t plane = static_cast<std::int64_t>(x.w()) * x.h();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (x.numel() > (1 << 16))
#endif
  for (int c = 0; c < x.c(); ++c) {
    const T* row = x.row(c, 0);
    double acc = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(row[i]);
    out.at(c, 0, 0) = static_cast<T>(acc / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
Tensor3T<T> activation(const Tensor3T<T>& x, Act kind) {
  Tensor3T<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  const std::int64_t n = x.numel();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > (1 << 16))
#endif
  for (std::int64_t i = 0; i < n; ++i) dst[i] = detail::apply_act(src[i], kind);
  return out;
}

// Cyclic axis roll (C,W,H) -> (W,H,C): out[w][h][c] = in[c][w][h].
template <typename T>
Tensor3T<T> permute_roll(const Tensor3T<T>& x) {
  Tensor3T<T> out(x.w(), x.h(), x.c());
  for (int c = 0; c < x.c(); ++c) {
    for (int w = 0; w < x.w(); ++w) {
      const T* row = x.row(c, w);
      for (int h = 0; h < x.h(); ++h) out.at(w, h, c) = row[h];
    }
  }
  return out;
}

namespace detail {

// align-corners-false source coordinate with edge clamping
inline void bilinear_axis(int i, int in_size, int out_size, int& lo, int& hi,
                          double& frac) {
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (i + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  if (src > in_size - 1) src = in_size - 1;
  lo = static_cast<int>(src);
  hi = std::min(lo + 1, in_size - 1);
  frac = src - lo;
}

}  // namespace detail

template <typename T>
Tensor3T<T> interpolate_bilinear(const Tensor3T<T>& x, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw ShapeError("interpolation target must be >= 1, got (" +
                     std::to_string(out_w) + "," + std::to_string(out_h) + ")");
  }
  if (out_w == x.w() && out_h == x.h()) return x;
  Tensor3T<T> out(x.c(), out_w, out_h);
  std::vector<int> hlo(out_h), hhi(out_h);
  std::vector<double> hfrac(out_h);
  for (int h = 0; h < out_h; ++h) {
    detail::bilinear_axis(h, x.h(), out_h, hlo[h], hhi[h], hfrac[h]);
  }
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (out.numel() > (1 << 15))
#endif
  for (int c = 0; c < x.c(); ++c) {
    for (int w = 0; w < out_w; ++w) {
      int wlo, whi;
      double wf;
      detail::bilinear_axis(w, x.w(), out_w, wlo, whi, wf);
      const T* r0 = x.row(c, wlo);
      const T* r1 = x.row(c, whi);
      T* orow = out.row(c, w);
      for (int h = 0; h < out_h; ++h) {
        const double a = (1.0 - hfrac[h]) * r0[hlo[h]] + hfrac[h] * r0[hhi[h]];
        const double b = (1.0 - hfrac[h]) * r1[hlo[h]] + hfrac[h] * r1[hhi[h]];
        orow[h] = static_cast<T>((1.0 - wf) * a + wf * b);
      }
    }
  }
  return out;
}

// Space-to-depth: (C, W, H) -> (C*r*r, W/r, H/r).
// Output channel c*r*r + dw*r + dh holds in[c][w*r+dw][h*r+dh].
template <typename T>
Tensor3T<T> pixel_unshuffle(const Tensor3T<T>& x, int r) {
  if (r < 1) throw ShapeError("shuffle factor must be >= 1");
  if (x.w() % r != 0 || x.h() % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims " + x.shape().str() +
                     " not divisible by r=" + std::to_string(r));
  }
  Tensor3T<T> out(x.c() * r * r, x.w() / r, x.h() / r);
  for (int c = 0; c < x.c(); ++c) {
    for (int dw = 0; dw < r; ++dw) {
      for (int dh = 0; dh < r; ++dh) {
        const int oc = (c * r + dw) * r + dh;
        for (int w = 0; w < out.w(); ++w) {
          const T* irow = x.row(c, w * r + dw);
          T* orow = out.row(oc, w);
          for (int h = 0; h < out.h(); ++h) orow[h] = irow[h * r + dh];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor3T<T> pixel_shuffle(const Tensor3T<T>& x, int r) {
  if (r < 1) throw ShapeError("shuffle factor must be >= 1");
  if (x.c() % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels of " + x.shape().str() +
                     " not divisible by r^2=" + std::to_string(r * r));
  }
  Tensor3T<T> out(x.c() / (r * r), x.w() * r, x.h() * r);
  for (int c = 0; c < out.c(); ++c) {
    for (int dw = 0; dw < r; ++dw) {
      for (int dh = 0; dh < r; ++dh) {
        const int ic = (c * r + dw) * r + dh;
        for (int w = 0; w < x.w(); ++w) {
          const T* irow = x.row(ic, w);
          T* orow = out.row(c, w * r + dw);
          for (int h = 0; h < x.h(); ++h) orow[h * r + dh] = irow[h];
        }
      }
    }
  }
  return out;
}

namespace detail {

template <typename T>
inline bool broadcast_compatible(const Shape3& a, const Shape3& b) {
  return a == b || (b.c == a.c && b.w == 1 && b.h == 1);
}

}  // namespace detail

// Elementwise combine; b may be (C,1,1) against a (C,W,H).
template <typename T, typename F>
Tensor3T<T> zip_elems(const Tensor3T<T>& a, const Tensor3T<T>& b, F&& f) {
  if (!detail::broadcast_compatible<T>(a.shape(), b.shape())) {
    throw ShapeError("elementwise shapes incompatible: " + a.shape().str() +
                     " vs " + b.shape().str());
  }
  Tensor3T<T> out(a.shape());
  const std::int64_t plane = static_cast<std::int64_t>(a.w()) * a.h();
  const bool bc = b.shape() != a.shape();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (a.numel() > (1 << 16))
#endif
  for (int c = 0; c < a.c(); ++c) {
    const T* arow = a.row(c, 0);
    T* orow = out.row(c, 0);
    if (bc) {
      const T bv = b.at(c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) orow[i] = f(arow[i], bv);
    } else {
      const T* brow = b.row(c, 0);
      for (std::int64_t i = 0; i < plane; ++i) orow[i] = f(arow[i], brow[i]);
    }
  }
  return out;
}

template <typename T>
Tensor3T<T> add(const Tensor3T<T>& a, const Tensor3T<T>& b) {
  return zip_elems(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor3T<T> mul(const Tensor3T<T>& a, const Tensor3T<T>& b) {
  return zip_elems(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
void add_inplace(Tensor3T<T>& a, const Tensor3T<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add_inplace shapes differ: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  T* ap = a.data();
  const T* bp = b.data();
  const std::int64_t n = a.numel();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > (1 << 16))
#endif
  for (std::int64_t i = 0; i < n; ++i) ap[i] += bp[i];
}

template <typename T>
Tensor3T<T> clamp01(const Tensor3T<T>& x) {
  Tensor3T<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    dst[i] = std::min(T(1), std::max(T(0), src[i]));
  }
  return out;
}

template <typename T>
Tensor3T<T> concat_channels(const std::vector<const Tensor3T<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  int ch = 0;
  for (const auto* p : parts) {
    if (p->w() != parts[0]->w() || p->h() != parts[0]->h()) {
      throw ShapeError("concat spatial dims differ: " + p->shape().str() +
                       " vs " + parts[0]->shape().str());
    }
    ch += p->c();
  }
  Tensor3T<T> out(ch, parts[0]->w(), parts[0]->h());
  std::int64_t off = 0;
  for (const auto* p : parts) {
    std::copy(p->data(), p->data() + p->numel(), out.data() + off);
    off += p->numel();
  }
  return out;
}

// Contiguous block spans along one axis; the last span may be shorter.
struct BlockSpan {
  int start = 0;
  int len = 0;
};

inline std::vector<BlockSpan> partition_axis(int total, int chunk) {
  if (chunk < 1) throw ShapeError("chunk size must be >= 1");
  std::vector<BlockSpan> spans;
  for (int s = 0; s < total; s += chunk) {
    spans.push_back({s, std::min(chunk, total - s)});
  }
  return spans;
}

// axis: 0 = channel, 1 = width, 2 = height
template <typename T>
Tensor3T<T> slice_axis(const Tensor3T<T>& x, int axis, int start, int len) {
  const Shape3 s = x.shape();
  const int limit = axis == 0 ? s.c : axis == 1 ? s.w : s.h;
  if (start < 0 || len < 1 || start + len > limit) {
    throw ShapeError("slice [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of range for axis " +
                     std::to_string(axis) + " of " + s.str());
  }
  if (axis == 0) {
    Tensor3T<T> out(len, s.w, s.h);
    std::copy(x.row(start, 0), x.row(start, 0) + out.numel(), out.data());
    return out;
  }
  if (axis == 1) {
    Tensor3T<T> out(s.c, len, s.h);
    for (int c = 0; c < s.c; ++c) {
      std::copy(x.row(c, start), x.row(c, start) + static_cast<std::int64_t>(len) * s.h,
                out.row(c, 0));
    }
    return out;
  }
  Tensor3T<T> out(s.c, s.w, len);
  for (int c = 0; c < s.c; ++c) {
    for (int w = 0; w < s.w; ++w) {
      const T* irow = x.row(c, w) + start;
      std::copy(irow, irow + len, out.row(c, w));
    }
  }
  return out;
}

template <typename T>
void paste_axis_add(Tensor3T<T>& dst, const Tensor3T<T>& block, int axis, int start) {
  const Shape3 s = dst.shape();
  const Shape3 b = block.shape();
  const bool ok = axis == 0 ? (b.w == s.w && b.h == s.h && start + b.c <= s.c)
                : axis == 1 ? (b.c == s.c && b.h == s.h && start + b.w <= s.w)
                            : (b.c == s.c && b.w == s.w && start + b.h <= s.h);
  if (!ok) {
    throw ShapeError("paste of " + b.str() + " at " + std::to_string(start) +
                     " on axis " + std::to_string(axis) + " into " + s.str());
  }
  if (axis == 0) {
    T* out = dst.row(start, 0);
    const T* src = block.data();
    for (std::int64_t i = 0; i < block.numel(); ++i) out[i] += src[i];
  } else if (axis == 1) {
    for (int c = 0; c < s.c; ++c) {
      T* out = dst.row(c, start);
      const T* src = block.row(c, 0);
      const std::int64_t n = static_cast<std::int64_t>(b.w) * b.h;
      for (std::int64_t i = 0; i < n; ++i) out[i] += src[i];
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      for (int w = 0; w < s.w; ++w) {
        T* out = dst.row(c, w) + start;
        const T* src = block.row(c, w);
        for (int i = 0; i < b.h; ++i) out[i] += src[i];
      }
    }
  }
}

}  // namespace ipl
