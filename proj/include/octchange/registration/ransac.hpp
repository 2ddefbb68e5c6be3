#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/registration/orb.hpp"

namespace octchange {

// Closed-form least-squares rigid fit (2D Procrustes without scaling):
// minimizes Σ |R(θ)·prior + t − current|².
inline RigidTransform2D fit_rigid_ls(std::span<const PointPair> pairs) {
  if (pairs.empty()) throw Error("rigid fit: no point pairs");
  Vec2 ma{}, mb{};
  for (const PointPair& p : pairs) {
    ma = ma + p.prior;
    mb = mb + p.current;
  }
  const double n = static_cast<double>(pairs.size());
  ma = (1.0 / n) * ma;
  mb = (1.0 / n) * mb;
  double sc = 0.0, ss = 0.0;
  for (const PointPair& p : pairs) {
    const Vec2 a = p.prior - ma, b = p.current - mb;
    sc += dot(a, b);
    ss += cross(a, b);
  }
  RigidTransform2D T{std::atan2(ss, sc), {}};
  T.t = mb - T.rotate(ma);
  return T;
}

inline double residual(const RigidTransform2D& T, const PointPair& p) { return norm(T(p.prior) - p.current); }

struct RansacParams {
  double d_reg = 3.0;
  int iterations = 2000;
  std::uint64_t seed = 0x5eed;
};

struct RansacResult {
  RigidTransform2D transform;
  std::vector<std::size_t> inliers;
};

// Two-point RANSAC over rigid motions; the winning consensus set (largest,
// then smallest squared residual) is refit by least squares until stable.
inline RansacResult ransac_rigid(std::span<const PointPair> pairs, const RansacParams& prm = {}) {
  if (pairs.size() < 2) throw Error("ransac: at least two point pairs required");
  std::mt19937_64 rng(prm.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);

  auto consensus = [&](const RigidTransform2D& T, std::vector<std::size_t>& idx) {
    idx.clear();
    double sse = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double r = residual(T, pairs[i]);
      if (r <= prm.d_reg) {
        idx.push_back(i);
        sse += r * r;
      }
    }
    return sse;
  };

  std::vector<std::size_t> best, cur;
  double best_sse = 0.0;
  RigidTransform2D best_T;
  for (int it = 0; it < prm.iterations; ++it) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    if (i == j) continue;
    if (norm(pairs[i].prior - pairs[j].prior) < 1e-9 || norm(pairs[i].current - pairs[j].current) < 1e-9) continue;
    const PointPair sample[2] = {pairs[i], pairs[j]};
    const RigidTransform2D T = fit_rigid_ls(sample);
    const double sse = consensus(T, cur);
    if (cur.size() > best.size() || (cur.size() == best.size() && !cur.empty() && sse < best_sse)) {
      best.swap(cur);
      best_sse = sse;
      best_T = T;
    }
  }
  if (best.size() < 2) throw Error("ransac: fewer than two inliers");

  RansacResult out{best_T, best};
  for (int round = 0; round < 10; ++round) {
    std::vector<PointPair> in;
    in.reserve(out.inliers.size());
    for (std::size_t k : out.inliers) in.push_back(pairs[k]);
    const RigidTransform2D T = fit_rigid_ls(in);
    std::vector<std::size_t> idx;
    consensus(T, idx);
    if (idx.size() < 2) break;
    const bool same = idx == out.inliers;
    out.transform = T;
    out.inliers = std::move(idx);
    if (same) break;
  }
  return out;
}

// Least-squares fit from manually picked landmarks.
inline RigidTransform2D fit_rigid_from_landmarks(std::span<const PointPair> pairs) {
  if (pairs.size() < 3) throw Error("at least three landmarks required");
  double spread = 0.0;
  for (const PointPair& p : pairs) spread = std::max(spread, norm(p.prior - pairs[0].prior));
  if (spread < 1e-9) throw Error("degenerate landmarks: all prior points coincide");
  return fit_rigid_ls(pairs);
}

}  // namespace octchange
