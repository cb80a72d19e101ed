#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ipl/tensor.hpp"

namespace ipl {

// 10*log10(1/MSE) for [0,1] images, capped at 100 dB when MSE < 1e-10.
inline double psnr(const Tensor3& a, const Tensor3& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr shapes differ: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  const double mse = acc / a.numel();
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> gauss_kernel11() {
  std::vector<double> k(11);
  const double sigma = 1.5;
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-only 11x11 Gaussian filter over a W x H plane (x-major),
// producing a (W-10) x (H-10) map.
inline std::vector<double> gauss_valid(const std::vector<double>& img, int w, int h) {
  static const std::vector<double> kernel = gauss_kernel11();
  const int vw = w - 10, vh = h - 10;
  std::vector<double> tmp(static_cast<std::size_t>(w) * vh);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < vh; ++y) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += kernel[k] * img[x * h + y + k];
      tmp[static_cast<std::size_t>(x) * vh + y] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(vw) * vh);
  for (int x = 0; x < vw; ++x) {
    for (int y = 0; y < vh; ++y) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += kernel[k] * tmp[static_cast<std::size_t>(x + k) * vh + y];
      out[static_cast<std::size_t>(x) * vh + y] = acc;
    }
  }
  return out;
}

}  // namespace detail

// Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01 K2=0.03,
// valid windows only, computed per channel and averaged.
inline double ssim(const Tensor3& a, const Tensor3& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim shapes differ: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  if (a.w() < 11 || a.h() < 11) {
    throw ValueError("ssim needs images at least 11x11, got " + a.shape().str());
  }
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const int w = a.w(), h = a.h();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  double total = 0.0;
  for (int c = 0; c < a.c(); ++c) {
    std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
    const float* ra = a.row(c, 0);
    const float* rb = b.row(c, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = ra[i];
      pb[i] = rb[i];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = detail::gauss_valid(pa, w, h);
    const auto mu_b = detail::gauss_valid(pb, w, h);
    const auto m_aa = detail::gauss_valid(paa, w, h);
    const auto m_bb = detail::gauss_valid(pbb, w, h);
    const auto m_ab = detail::gauss_valid(pab, w, h);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = m_aa[i] - mu_a[i] * mu_a[i];
      const double vb = m_bb[i] - mu_b[i] * mu_b[i];
      const double cov = m_ab[i] - mu_a[i] * mu_b[i];
      acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += acc / mu_a.size();
  }
  return total / a.c();
}

}  // namespace ipl
