#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "octchange/core/image.hpp"

namespace octchange::filters {

using Kernel = std::vector<double>;  // odd length, centered

// Separable 2D correlation with replicate padding: rows kernel along columns,
// then cols kernel along rows.
inline ImageD separable(const ImageD& in, const Kernel& along_cols, const Kernel& along_rows) {
  const int rows = in.rows(), cols = in.cols();
  const int rc = static_cast<int>(along_cols.size()) / 2;
  const int rr = static_cast<int>(along_rows.size()) / 2;
  ImageD tmp(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int k = -rc; k <= rc; ++k) s += along_cols[static_cast<std::size_t>(k + rc)] * in.clamped(r, c + k);
      tmp(r, c) = s;
    }
  }
  ImageD out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int k = -rr; k <= rr; ++k) s += along_rows[static_cast<std::size_t>(k + rr)] * tmp.clamped(r + k, c);
      out(r, c) = s;
    }
  }
  return out;
}

inline int gaussian_radius(double sigma) { return std::max(1, static_cast<int>(std::ceil(3.0 * sigma))); }

// order 0: normalized Gaussian; 1, 2: analytic derivatives of the Gaussian.
inline Kernel gaussian_kernel(double sigma, int order = 0) {
  const int r = gaussian_radius(sigma);
  Kernel k(static_cast<std::size_t>(2 * r + 1));
  const double s2 = sigma * sigma;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double g = std::exp(-0.5 * i * i / s2);
    sum += g;
    k[static_cast<std::size_t>(i + r)] = g;
  }
  for (int i = -r; i <= r; ++i) {
    double& v = k[static_cast<std::size_t>(i + r)];
    const double g = v / sum;
    switch (order) {
      case 0: v = g; break;
      case 1: v = -i / s2 * g; break;
      default: v = (i * i - s2) / (s2 * s2) * g; break;
    }
  }
  // Correlation with the kernel must compute the derivative, so flip odd orders.
  if (order == 1) std::reverse(k.begin(), k.end());
  return k;
}

inline ImageD gaussian_blur(const ImageD& in, double sigma) {
  const Kernel g = gaussian_kernel(sigma, 0);
  return separable(in, g, g);
}

// Mean over a (2r+1)² window with replicate padding.
inline ImageD box_filter(const ImageD& in, int radius) {
  const Kernel k(static_cast<std::size_t>(2 * radius + 1), 1.0 / (2 * radius + 1));
  return separable(in, k, k);
}

// Otsu threshold over values in [lo, hi] using `bins` histogram bins; returns
// the threshold value (pixels strictly above it are foreground).
inline double otsu_threshold(std::span<const double> values, int bins = 256) {
  if (values.empty()) return 0.0;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  if (!(hi > lo)) return hi;
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  const double scale = bins / (hi - lo);
  for (double v : values) {
    int b = static_cast<int>((v - lo) * scale);
    b = std::clamp(b, 0, bins - 1);
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < bins; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_i = 0;
  for (int i = 0; i < bins; ++i) {
    w0 += hist[static_cast<std::size_t>(i)];
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += i * hist[static_cast<std::size_t>(i)];
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_i = i;
    }
  }
  return lo + (best_i + 1) / scale;
}

// Bilinear sample at fractional (row, col) with replicate borders.
inline double bilinear(const ImageD& img, double r, double c) {
  const int r0 = static_cast<int>(std::floor(r)), c0 = static_cast<int>(std::floor(c));
  const double fr = r - r0, fc = c - c0;
  const double v00 = img.clamped(r0, c0), v01 = img.clamped(r0, c0 + 1);
  const double v10 = img.clamped(r0 + 1, c0), v11 = img.clamped(r0 + 1, c0 + 1);
  return (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
}

}  // namespace octchange::filters
