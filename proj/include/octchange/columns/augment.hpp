#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"

namespace octchange {

// Mirror across the patch's vertical axis (column order reversed).
inline nn::Tensor mirror(const nn::Tensor& t) {
  nn::Tensor out(t.shape);
  const int h = t.dim(0), w = t.dim(1), d = t.dim(2);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < d; ++k) out.at3(r, c, k) = t.at3(r, w - 1 - c, k);
  return out;
}

// In-plane rotation of every depth plane about the patch centre; bilinear
// resampling with replicated edges.
inline nn::Tensor rotate(const nn::Tensor& t, double angle_rad) {
  const int h = t.dim(0), w = t.dim(1), d = t.dim(2);
  nn::Tensor out(t.shape);
  const double cr = (h - 1) / 2.0, cc = (w - 1) / 2.0;
  const double cs = std::cos(angle_rad), sn = std::sin(angle_rad);
  auto px = [&](int r, int c, int k) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return t.at3(r, c, k);
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      // Inverse map of the output pixel into the source patch.
      const double dr = r - cr, dc = c - cc;
      const double sr = cr + cs * dr + sn * dc;
      const double sc = cc - sn * dr + cs * dc;
      const int r0 = static_cast<int>(std::floor(sr)), c0 = static_cast<int>(std::floor(sc));
      const double fr = sr - r0, fc = sc - c0;
      for (int k = 0; k < d; ++k)
        out.at3(r, c, k) = (1 - fr) * ((1 - fc) * px(r0, c0, k) + fc * px(r0, c0 + 1, k)) +
                           fr * ((1 - fc) * px(r0 + 1, c0, k) + fc * px(r0 + 1, c0 + 1, k));
    }
  return out;
}

inline MaskFeature mirror(const MaskFeature& f) {
  MaskFeature out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(i * 3 + j)] = f[static_cast<std::size_t>(i * 3 + 2 - j)];
  return out;
}

template <typename Fn>
void transform_patches(ColumnSample& s, Fn&& fn) {
  s.patch.t = fn(s.patch.t);
}

template <typename Fn>
void transform_patches(ColumnPairSample& s, Fn&& fn) {
  s.prior.t = fn(s.prior.t);
  s.current.t = fn(s.current.t);
}

inline void mirror_extra(ColumnSample&) {}
inline void mirror_extra(ColumnPairSample& s) { s.mask = mirror(s.mask); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct AugmentConfig {
  double negative_ratio = 1.0;
  double max_rotation_deg = 2.0;
  int rotations = 2;
};

// Every positive plus its mirror and `rotations` small rotations, followed by
// a seeded subset of negatives sized negative_ratio × (original positives).
template <typename Sample>
std::vector<Sample> balance_and_augment(const std::vector<Sample>& samples, const AugmentConfig& cfg,
                                        std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].positive() ? pos : neg).push_back(i);
  if (pos.empty()) throw Error("no positive samples");

  std::vector<Sample> out;
  out.reserve(pos.size() * static_cast<std::size_t>(2 + cfg.rotations) + neg.size());
  const double lim = cfg.max_rotation_deg * std::numbers::pi / 180.0;
  for (std::size_t i : pos) {
    out.push_back(samples[i]);
    Sample m = samples[i];
    transform_patches(m, [](const nn::Tensor& t) { return mirror(t); });
    mirror_extra(m);
    out.push_back(std::move(m));
    std::mt19937_64 rng(splitmix64(seed ^ static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> angle(-lim, lim);
    for (int k = 0; k < cfg.rotations; ++k) {
      Sample r = samples[i];
      const double a = angle(rng);
      transform_patches(r, [a](const nn::Tensor& t) { return rotate(t, a); });
      out.push_back(std::move(r));
    }
  }
  const std::size_t want =
      std::min(neg.size(), static_cast<std::size_t>(std::llround(cfg.negative_ratio * static_cast<double>(pos.size()))));
  std::mt19937_64 rng(splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL));
  for (std::size_t k = 0; k < want; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, neg.size() - 1);
    std::swap(neg[k], neg[pick(rng)]);
  }
  std::sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(want));
  for (std::size_t k = 0; k < want; ++k) out.push_back(samples[neg[k]]);
  return out;
}

}  // namespace octchange
