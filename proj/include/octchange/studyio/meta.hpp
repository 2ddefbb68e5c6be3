#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/core/geometry.hpp"

namespace octchange {

// Acquisition geometry of one OCT study.
//
// The slice stack covers the FOV rectangle of the IR image: slice k occupies
// IR rows [fov_origin.x + k·spacing, fov_origin.x + (k+1)·spacing) with
// spacing = fov_extent.h / n_slices, and OCT column j the IR columns starting
// at fov_origin.y + fov_extent.w · j / oct_width.
struct StudyMeta {
  int n_slices = 0;
  int oct_height = 0;
  int oct_width = 0;
  double oct_px_z_um = 0.0;
  double oct_px_y_um = 0.0;
  int ir_rows = 0;
  int ir_cols = 0;
  double ir_px_h_um = 0.0;
  double ir_px_w_um = 0.0;
  Vec2 fov_origin{};        // (h0, w0) IR px
  Vec2 fov_extent{};        // (h_IR, w_IR) IR px
  Vec2 fovea{};             // IR px
  std::string acquired_at;  // ISO-8601 date or date-time

  Rect fov() const { return {fov_origin.x, fov_origin.y, fov_extent.x, fov_extent.y}; }
  double slice_spacing_px() const { return fov_extent.x / n_slices; }
  double columns_per_ir_px() const { return oct_width / fov_extent.y; }
  double ir_pixel_area_mm2() const { return ir_px_h_um * ir_px_w_um * 1e-6; }
  double ir_px_mm() const { return ir_px_w_um * 1e-3; }

  friend bool operator==(const StudyMeta&, const StudyMeta&) = default;
};

inline void validate(const StudyMeta& m) {
  if (m.n_slices < 1) throw Error("empty scan");
  if (m.oct_height < 1 || m.oct_width < 1) throw Error("non-positive OCT dimensions");
  if (m.ir_rows < 1 || m.ir_cols < 1) throw Error("non-positive IR dimensions");
  if (!(m.oct_px_z_um > 0) || !(m.oct_px_y_um > 0) || !(m.ir_px_h_um > 0) || !(m.ir_px_w_um > 0))
    throw Error("non-positive resolution");
  if (!(m.fov_extent.x > 0) || !(m.fov_extent.y > 0)) throw Error("non-positive FOV extent");
  if (m.fov_origin.x < 0 || m.fov_origin.y < 0 || m.fov_origin.x + m.fov_extent.x > m.ir_rows ||
      m.fov_origin.y + m.fov_extent.y > m.ir_cols)
    throw Error("FOV rectangle lies outside the IR image");
}

// Days since 1970-01-01 for "YYYY-MM-DD" with an optional "THH:MM:SS..." suffix.
inline double parse_iso_days(const std::string& s) {
  int y = 0, mo = 0, d = 0, hh = 0, mi = 0;
  double ss = 0.0;
  const int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%lf", &y, &mo, &d, &hh, &mi, &ss);
  if (n < 3) throw Error("invalid ISO-8601 date: '" + s + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw Error("invalid calendar date: '" + s + "'");
  const double days = static_cast<double>(sys_days{ymd}.time_since_epoch().count());
  return days + (n >= 6 ? (hh * 3600.0 + mi * 60.0 + ss) / 86400.0 : 0.0);
}

// Inverse of parse_iso_days; emits a time-of-day suffix only when needed.
inline std::string format_iso_days(double days) {
  using namespace std::chrono;
  const double whole = std::floor(days);
  const year_month_day ymd{sys_days{std::chrono::days{static_cast<long>(whole)}}};
  char buf[48];
  const double frac_s = std::round((days - whole) * 86400.0);
  if (frac_s <= 0.0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
  } else {
    const long s = static_cast<long>(frac_s);
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), s / 3600, (s / 60) % 60, s % 60);
  }
  return buf;
}

inline double elapsed_years(const std::string& from, const std::string& to) {
  if (from.empty() || to.empty()) throw Error("missing acquisition dates");
  return (parse_iso_days(to) - parse_iso_days(from)) / 365.25;
}

inline void to_json(nlohmann::json& j, const StudyMeta& m) {
  j = nlohmann::json{{"n_slices", m.n_slices},
                     {"oct_height", m.oct_height},
                     {"oct_width", m.oct_width},
                     {"oct_px_um", {m.oct_px_z_um, m.oct_px_y_um}},
                     {"ir_size", {m.ir_rows, m.ir_cols}},
                     {"ir_px_um", {m.ir_px_h_um, m.ir_px_w_um}},
                     {"fov_origin", {m.fov_origin.x, m.fov_origin.y}},
                     {"fov_extent", {m.fov_extent.x, m.fov_extent.y}},
                     {"fovea_xy", {m.fovea.x, m.fovea.y}},
                     {"acquired_at", m.acquired_at}};
}

inline void from_json(const nlohmann::json& j, StudyMeta& m) {
  try {
    m.n_slices = j.at("n_slices").get<int>();
    m.oct_height = j.at("oct_height").get<int>();
    m.oct_width = j.at("oct_width").get<int>();
    m.oct_px_z_um = j.at("oct_px_um").at(0).get<double>();
    m.oct_px_y_um = j.at("oct_px_um").at(1).get<double>();
    m.ir_rows = j.at("ir_size").at(0).get<int>();
    m.ir_cols = j.at("ir_size").at(1).get<int>();
    m.ir_px_h_um = j.at("ir_px_um").at(0).get<double>();
    m.ir_px_w_um = j.at("ir_px_um").at(1).get<double>();
    m.fov_origin = {j.at("fov_origin").at(0).get<double>(), j.at("fov_origin").at(1).get<double>()};
    m.fov_extent = {j.at("fov_extent").at(0).get<double>(), j.at("fov_extent").at(1).get<double>()};
    m.fovea = {j.at("fovea_xy").at(0).get<double>(), j.at("fovea_xy").at(1).get<double>()};
    m.acquired_at = j.at("acquired_at").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("meta.json: ") + e.what());
  }
}

}  // namespace octchange
