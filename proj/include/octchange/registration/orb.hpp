#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/filters.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/core/image.hpp"

namespace octchange {

using Descriptor = std::array<std::uint64_t, 4>;  // 256 bits

struct Keypoint {
  Vec2 position;
  double orientation = 0.0;
  Descriptor descriptor{};
  double score = 0.0;
};

struct PointPair {
  Vec2 prior;
  Vec2 current;
  int distance = 0;  // Hamming distance of the matched descriptors
};

struct OrbParams {
  int max_keypoints = 500;
  int nms_radius = 3;
  double harris_k = 0.04;
  double gradient_sigma = 1.0;
  double window_sigma = 2.0;
  double min_response = 1e-3;   // relative to the strongest corner
  int patch_radius = 15;        // 31×31 descriptor patch
  double smooth_sigma = 2.0;    // pre-smoothing before descriptor tests
  std::uint64_t pattern_seed = 0x0c7c4a11;
  int max_hamming = 96;
};

inline int hamming(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

namespace orb_detail {

struct TestPair {
  double r1, c1, r2, c2;
};

// Fixed seeded sampling pattern of 256 point pairs inside the patch.
inline std::vector<TestPair> pattern(const OrbParams& p) {
  std::mt19937_64 rng(p.pattern_seed);
  std::normal_distribution<double> g(0.0, (2 * p.patch_radius + 1) / 5.0);
  const double lim = p.patch_radius / std::sqrt(2.0);  // stays inside the patch at any rotation
  auto draw = [&] {
    double v;
    do v = g(rng);
    while (std::abs(v) > lim);
    return v;
  };
  std::vector<TestPair> out(256);
  for (TestPair& t : out) t = {draw(), draw(), draw(), draw()};
  return out;
}

inline ImageD harris_response(const ImageD& img, const OrbParams& p) {
  const auto g0 = filters::gaussian_kernel(p.gradient_sigma, 0);
  const auto g1 = filters::gaussian_kernel(p.gradient_sigma, 1);
  const ImageD gr = filters::separable(img, g0, g1);
  const ImageD gc = filters::separable(img, g1, g0);
  ImageD xx(img.rows(), img.cols()), yy(img.rows(), img.cols()), xy(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double a = gr.data()[i], b = gc.data()[i];
    xx.data()[i] = a * a;
    yy.data()[i] = b * b;
    xy.data()[i] = a * b;
  }
  const ImageD sxx = filters::gaussian_blur(xx, p.window_sigma);
  const ImageD syy = filters::gaussian_blur(yy, p.window_sigma);
  const ImageD sxy = filters::gaussian_blur(xy, p.window_sigma);
  ImageD r(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double a = sxx.data()[i], b = sxy.data()[i], d = syy.data()[i];
    r.data()[i] = a * d - b * b - p.harris_k * (a + d) * (a + d);
  }
  return r;
}

// Intensity-centroid orientation over a disk of radius `rad`.
inline double centroid_angle(const ImageD& img, Vec2 at, int rad) {
  const int r0 = static_cast<int>(std::lround(at.x)), c0 = static_cast<int>(std::lround(at.y));
  double m10 = 0.0, m01 = 0.0;
  for (int dr = -rad; dr <= rad; ++dr)
    for (int dc = -rad; dc <= rad; ++dc) {
      if (dr * dr + dc * dc > rad * rad) continue;
      const double v = img.clamped(r0 + dr, c0 + dc);
      m10 += dr * v;
      m01 += dc * v;
    }
  return std::atan2(m01, m10);
}

}  // namespace orb_detail

// Oriented corners with rotated binary descriptors, ranked by Harris strength.
inline std::vector<Keypoint> detect_keypoints(const ImageD& img, const OrbParams& p = {}) {
  const ImageD resp = orb_detail::harris_response(img, p);
  double rmax = 0.0;
  for (double v : resp.data()) rmax = std::max(rmax, v);
  std::vector<Keypoint> kps;
  if (rmax <= 0.0) return kps;
  const int border = p.patch_radius + 2;
  const int nr = p.nms_radius;
  for (int r = border; r < img.rows() - border; ++r)
    for (int c = border; c < img.cols() - border; ++c) {
      const double v = resp(r, c);
      if (v < p.min_response * rmax) continue;
      bool is_max = true;
      for (int dr = -nr; dr <= nr && is_max; ++dr)
        for (int dc = -nr; dc <= nr; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const double w = resp(r + dr, c + dc);
          // Strict on one side so plateaus keep exactly one pixel.
          if (w > v || (w == v && (dr < 0 || (dr == 0 && dc < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      // Sub-pixel peak from a separable quadratic fit.
      const double dr_num = resp(r + 1, c) - resp(r - 1, c);
      const double dr_den = resp(r + 1, c) - 2 * v + resp(r - 1, c);
      const double dc_num = resp(r, c + 1) - resp(r, c - 1);
      const double dc_den = resp(r, c + 1) - 2 * v + resp(r, c - 1);
      const double off_r = dr_den < 0 ? std::clamp(-0.5 * dr_num / dr_den, -0.5, 0.5) : 0.0;
      const double off_c = dc_den < 0 ? std::clamp(-0.5 * dc_num / dc_den, -0.5, 0.5) : 0.0;
      Keypoint k;
      k.position = {r + off_r, c + off_c};
      k.score = v;
      kps.push_back(k);
    }
  std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
  if (static_cast<int>(kps.size()) > p.max_keypoints) kps.resize(static_cast<std::size_t>(p.max_keypoints));

  const ImageD smooth = filters::gaussian_blur(img, p.smooth_sigma);
  const auto pat = orb_detail::pattern(p);
  for (Keypoint& k : kps) {
    k.orientation = orb_detail::centroid_angle(smooth, k.position, p.patch_radius);
    const double cs = std::cos(k.orientation), sn = std::sin(k.orientation);
    for (std::size_t b = 0; b < pat.size(); ++b) {
      const auto& t = pat[b];
      const double v1 = filters::bilinear(smooth, k.position.x + cs * t.r1 - sn * t.c1, k.position.y + sn * t.r1 + cs * t.c1);
      const double v2 = filters::bilinear(smooth, k.position.x + cs * t.r2 - sn * t.c2, k.position.y + sn * t.r2 + cs * t.c2);
      if (v1 < v2) k.descriptor[b / 64] |= std::uint64_t{1} << (b % 64);
    }
  }
  return kps;
}

// Mutual nearest neighbours under Hamming distance, sorted by distance.
inline std::vector<PointPair> match_keypoints(const std::vector<Keypoint>& a, const std::vector<Keypoint>& b,
                                              int max_hamming = 256) {
  std::vector<PointPair> out;
  if (a.empty() || b.empty()) return out;
  std::vector<int> best_ab(a.size(), -1), best_ba(b.size(), -1);
  std::vector<int> dist_ab(a.size(), 1 << 20), dist_ba(b.size(), 1 << 20);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const int d = hamming(a[i].descriptor, b[j].descriptor);
      if (d < dist_ab[i]) {
        dist_ab[i] = d;
        best_ab[i] = static_cast<int>(j);
      }
      if (d < dist_ba[j]) {
        dist_ba[j] = d;
        best_ba[j] = static_cast<int>(i);
      }
    }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int j = best_ab[i];
    if (j < 0 || best_ba[static_cast<std::size_t>(j)] != static_cast<int>(i)) continue;
    if (dist_ab[i] > max_hamming) continue;
    out.push_back({a[i].position, b[static_cast<std::size_t>(j)].position, dist_ab[i]});
  }
  std::stable_sort(out.begin(), out.end(), [](const PointPair& x, const PointPair& y) { return x.distance < y.distance; });
  return out;
}

// Keypoints on both vesselness images, matched; fewer than two candidates is an error.
inline std::vector<PointPair> detect_and_match(const ImageD& vessel_prior, const ImageD& vessel_current,
                                               const OrbParams& p = {}) {
  const auto kp = detect_keypoints(vessel_prior, p);
  const auto kc = detect_keypoints(vessel_current, p);
  auto pairs = match_keypoints(kp, kc, p.max_hamming);
  if (pairs.size() < 2) throw Error("insufficient features");
  return pairs;
}

}  // namespace octchange
