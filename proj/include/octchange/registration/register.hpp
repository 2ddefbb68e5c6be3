#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/core/filters.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/core/image.hpp"
#include "octchange/registration/frangi.hpp"
#include "octchange/registration/orb.hpp"
#include "octchange/registration/ransac.hpp"
#include "octchange/studyio/study.hpp"

namespace octchange {

enum class RegStatus { automatic, needs_manual, manual };

inline const char* to_string(RegStatus s) {
  switch (s) {
    case RegStatus::automatic: return "automatic";
    case RegStatus::needs_manual: return "needs_manual";
    default: return "manual";
  }
}

inline RegStatus reg_status_from_string(const std::string& s) {
  if (s == "automatic") return RegStatus::automatic;
  if (s == "needs_manual") return RegStatus::needs_manual;
  if (s == "manual") return RegStatus::manual;
  throw Error("unknown registration status '" + s + "'");
}

struct RegistrationResult {
  RigidTransform2D transform;  // prior IR -> current IR
  int inlier_count = 0;
  int candidate_count = 0;
  double vessel_overlap = 0.0;
  RegStatus status = RegStatus::needs_manual;
};

struct RegistrationConfig {
  FrangiParams frangi;
  OrbParams orb;
  RansacParams ransac;
  double tau_reg = 0.5;
};

// Prior mask resampled into the current frame (bilinear, ≥ 0.5). `defined`
// marks current pixels whose preimage lies inside the prior image.
inline Mask warp_mask(const Mask& prior, const RigidTransform2D& T, int rows, int cols, Mask* defined = nullptr) {
  const RigidTransform2D inv = T.inverse();
  Mask out(rows, cols, 0);
  if (defined) *defined = Mask(rows, cols, 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      // pixel centres sit at half-integer coordinates in both frames
      const Vec2 q = inv({r + 0.5, c + 0.5});
      const Vec2 p{q.x - 0.5, q.y - 0.5};
      if (p.x < 0 || p.y < 0 || p.x > prior.rows() - 1 || p.y > prior.cols() - 1) continue;
      if (defined) (*defined)(r, c) = 1;
      const int r0 = std::min(static_cast<int>(p.x), prior.rows() - 2 < 0 ? 0 : prior.rows() - 2);
      const int c0 = std::min(static_cast<int>(p.y), prior.cols() - 2 < 0 ? 0 : prior.cols() - 2);
      const double fr = p.x - r0, fc = p.y - c0;
      auto v = [&](int rr, int cc) { return prior.clamped(rr, cc) ? 1.0 : 0.0; };
      const double s = (1 - fr) * ((1 - fc) * v(r0, c0) + fc * v(r0, c0 + 1)) +
                       fr * ((1 - fc) * v(r0 + 1, c0) + fc * v(r0 + 1, c0 + 1));
      if (s >= 0.5) out(r, c) = 1;
    }
  return out;
}

// Dice between the warped prior vessel mask and the current one, restricted to
// the region where the warp is defined.
inline RegistrationResult assess_registration(const Mask& vessel_prior, const Mask& vessel_current,
                                              const RigidTransform2D& T, double tau_reg = 0.5) {
  RegistrationResult res;
  res.transform = T;
  if (count_nonzero(vessel_prior) == 0 || count_nonzero(vessel_current) == 0) {
    res.vessel_overlap = 0.0;
    res.status = RegStatus::needs_manual;
    return res;
  }
  Mask defined;
  const Mask warped = warp_mask(vessel_prior, T, vessel_current.rows(), vessel_current.cols(), &defined);
  Mask cur = vessel_current;
  for (std::size_t i = 0; i < cur.size(); ++i)
    if (!defined.data()[i]) cur.data()[i] = 0;
  res.vessel_overlap = dice(warped, cur);
  res.status = res.vessel_overlap < tau_reg ? RegStatus::needs_manual : RegStatus::automatic;
  return res;
}

struct VesselMaps {
  Vesselness prior;
  Vesselness current;
};

// A rigid fit in pixel units needs both IR images on the same pixel grid.
inline void require_same_ir_grid(const StudyMeta& a, const StudyMeta& b) {
  auto same = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max(std::abs(x), std::abs(y)); };
  if (!same(a.ir_px_h_um, b.ir_px_h_um) || !same(a.ir_px_w_um, b.ir_px_w_um))
    throw Error("IR pixel sizes differ (" + std::to_string(a.ir_px_h_um) + "x" + std::to_string(a.ir_px_w_um) + " vs " +
                std::to_string(b.ir_px_h_um) + "x" + std::to_string(b.ir_px_w_um) +
                " um); resample the current study to the prior's grid first");
}

inline VesselMaps vessel_maps(const Study& prior, const Study& current, const RegistrationConfig& cfg) {
  require_same_ir_grid(prior.meta, current.meta);
  return {frangi_vesselness(prior.ir, cfg.frangi), frangi_vesselness(current.ir, cfg.frangi)};
}

// Automatic path: vesselness -> keypoints -> RANSAC -> vessel-overlap check.
// Feature or RANSAC failure is reported as needs_manual, not thrown.
inline RegistrationResult register_auto(const VesselMaps& v, const RegistrationConfig& cfg = {}) {
  RegistrationResult res;
  try {
    const auto pairs = detect_and_match(v.prior.response, v.current.response, cfg.orb);
    const RansacResult rr = ransac_rigid(pairs, cfg.ransac);
    res = assess_registration(v.prior.mask, v.current.mask, rr.transform, cfg.tau_reg);
    res.inlier_count = static_cast<int>(rr.inliers.size());
    res.candidate_count = static_cast<int>(pairs.size());
  } catch (const Error& e) {
    warn(std::string("registration: ") + e.what());
    res.status = RegStatus::needs_manual;
  }
  return res;
}

inline RegistrationResult register_studies(const Study& prior, const Study& current,
                                           const RegistrationConfig& cfg = {}) {
  return register_auto(vessel_maps(prior, current, cfg), cfg);
}

// Manual fallback: least-squares fit on ≥ 3 landmark pairs; status becomes manual.
inline RegistrationResult register_manual(const VesselMaps& v, std::span<const PointPair> landmarks,
                                          double tau_reg = 0.5) {
  const RigidTransform2D T = fit_rigid_from_landmarks(landmarks);
  RegistrationResult res = assess_registration(v.prior.mask, v.current.mask, T, tau_reg);
  res.inlier_count = static_cast<int>(landmarks.size());
  res.candidate_count = static_cast<int>(landmarks.size());
  res.status = RegStatus::manual;
  return res;
}

// Landmark exchange: one {"prior_xy": [x, y], "current_xy": [x, y]} per line.
inline std::vector<PointPair> landmarks_from_string(const std::string& text) {
  std::vector<PointPair> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PointPair p;
      p.prior = {j.at("prior_xy").at(0).get<double>(), j.at("prior_xy").at(1).get<double>()};
      p.current = {j.at("current_xy").at(0).get<double>(), j.at("current_xy").at(1).get<double>()};
      out.push_back(p);
    } catch (const nlohmann::json::exception& e) {
      throw Error("landmark line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string landmarks_to_string(std::span<const PointPair> pairs) {
  std::string out;
  for (const PointPair& p : pairs) {
    nlohmann::json j{{"prior_xy", {p.prior.x, p.prior.y}}, {"current_xy", {p.current.x, p.current.y}}};
    out += j.dump() + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const RegistrationResult& r) {
  return {{"theta_deg", rad_to_deg(r.transform.theta)},
          {"t_px", {r.transform.t.x, r.transform.t.y}},
          {"inliers", r.inlier_count},
          {"candidates", r.candidate_count},
          {"vessel_dice", r.vessel_overlap},
          {"status", to_string(r.status)}};
}

inline RegistrationResult registration_from_json(const nlohmann::json& j) {
  RegistrationResult r;
  try {
    r.transform.theta = deg_to_rad(j.at("theta_deg").get<double>());
    r.transform.t = {j.at("t_px").at(0).get<double>(), j.at("t_px").at(1).get<double>()};
    r.inlier_count = j.at("inliers").get<int>();
    r.candidate_count = j.value("candidates", r.inlier_count);
    r.vessel_overlap = j.at("vessel_dice").get<double>();
    r.status = reg_status_from_string(j.at("status").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("registration report: ") + e.what());
  }
  return r;
}

}  // namespace octchange
