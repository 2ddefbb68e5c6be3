#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/filters.hpp"
#include "octchange/core/image.hpp"

namespace octchange {

struct FrangiParams {
  std::vector<double> scales{1.0, 2.0, 3.0};
  double beta = 0.5;
  double c_fraction = 0.5;  // c = c_fraction · max Hessian Frobenius norm per scale
};

struct Vesselness {
  ImageD response;
  Mask mask;
  double threshold = 0.0;
};

// Scale-normalized Hessian (σ²·H) of a Gaussian-smoothed image.
struct Hessian {
  ImageD rr, cc, rc;
};

inline Hessian hessian(const ImageD& img, double sigma) {
  const auto g0 = filters::gaussian_kernel(sigma, 0);
  const auto g1 = filters::gaussian_kernel(sigma, 1);
  const auto g2 = filters::gaussian_kernel(sigma, 2);
  Hessian h{filters::separable(img, g0, g2), filters::separable(img, g2, g0), filters::separable(img, g1, g1)};
  const double s2 = sigma * sigma;
  for (ImageD* m : {&h.rr, &h.cc, &h.rc})
    for (double& v : m->data()) v *= s2;
  return h;
}

// Eigenvalues of [[a, b], [b, d]] ordered so that |l1| <= |l2|.
inline void sym_eigen2(double a, double b, double d, double& l1, double& l2) {
  const double tr = 0.5 * (a + d);
  const double disc = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
  const double e1 = tr + disc, e2 = tr - disc;
  if (std::abs(e1) <= std::abs(e2)) {
    l1 = e1;
    l2 = e2;
  } else {
    l1 = e2;
    l2 = e1;
  }
}

// Multiscale Frangi vesselness for dark tubular structures on a bright
// background: a valley has a large positive curvature across it (l2 > 0).
inline Vesselness frangi_vesselness(const ImageD& ir, const FrangiParams& p = {}) {
  if (p.scales.empty()) throw Error("frangi: no scales");
  const double smax = *std::max_element(p.scales.begin(), p.scales.end());
  if (*std::min_element(p.scales.begin(), p.scales.end()) <= 0) throw Error("frangi: scales must be positive");
  if (ir.rows() < 3.0 * smax || ir.cols() < 3.0 * smax) throw Error("image smaller than 3 sigma_max");

  Vesselness out;
  out.response = ImageD(ir.rows(), ir.cols(), 0.0);
  const double b2 = 2.0 * p.beta * p.beta;
  for (double sigma : p.scales) {
    const Hessian h = hessian(ir, sigma);
    double smax_norm = 0.0;
    for (std::size_t i = 0; i < h.rr.size(); ++i) {
      const double a = h.rr.data()[i], b = h.rc.data()[i], d = h.cc.data()[i];
      smax_norm = std::max(smax_norm, std::sqrt(a * a + 2 * b * b + d * d));
    }
    if (smax_norm <= 0.0) continue;
    const double c = p.c_fraction * smax_norm;
    const double c2 = 2.0 * c * c;
    for (std::size_t i = 0; i < h.rr.size(); ++i) {
      double l1, l2;
      sym_eigen2(h.rr.data()[i], h.rc.data()[i], h.cc.data()[i], l1, l2);
      if (l2 <= 0.0) continue;
      const double rb = l1 / l2;
      const double s2 = l1 * l1 + l2 * l2;
      const double v = std::exp(-rb * rb / b2) * (1.0 - std::exp(-s2 / c2));
      double& o = out.response.data()[i];
      if (v > o) o = v;
    }
  }
  out.mask = Mask(ir.rows(), ir.cols(), 0);
  out.threshold = filters::otsu_threshold(out.response.data());
  bool any = false;
  for (std::size_t i = 0; i < out.response.size(); ++i)
    if (out.response.data()[i] > out.threshold && out.response.data()[i] > 0) {
      out.mask.data()[i] = 1;
      any = true;
    }
  if (!any) out.threshold = 0.0;
  return out;
}

}  // namespace octchange
