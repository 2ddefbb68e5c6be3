#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/lesions/lesions.hpp"
#include "octchange/measure/shape.hpp"
#include "octchange/registration/register.hpp"
#include "octchange/studyio/meta.hpp"

namespace octchange {

enum class Eye { right, left };

inline std::string to_string(Eye e) { return e == Eye::right ? "OD" : "OS"; }

inline Eye eye_from_string(const std::string& s) {
  if (s == "OD" || s == "right") return Eye::right;
  if (s == "OS" || s == "left") return Eye::left;
  throw Error("unknown laterality '" + s + "' (expected OD or OS)");
}

struct MeasureConfig {
  Eye eye = Eye::right;  // right eye: nasal = -col
  std::array<double, 3> disk_diameters_mm{1.0, 3.0, 6.0};
  double min_area_mm2 = kMinLesionAreaMm2;
};

// Quarters of a fovea-centred disk, split along the diagonals.
enum Quarter { kSuperior = 0, kNasal = 1, kInferior = 2, kTemporal = 3 };
inline constexpr std::array<const char*, 4> kQuarterNames{"superior", "nasal", "inferior", "temporal"};

// Sign of the nasal direction along columns.
inline double nasal_sign(Eye e) { return e == Eye::right ? -1.0 : 1.0; }

// Offset of a pixel centre from the fovea in mm, as (up, nasal).
inline Vec2 fovea_offset(int r, int c, Vec2 fovea, PixelSize px, Eye e) {
  const double up = -(r + 0.5 - fovea.x) * px.h_mm;
  const double nasal = nasal_sign(e) * (c + 0.5 - fovea.y) * px.w_mm;
  return {up, nasal};
}

inline Quarter quarter_of(Vec2 o) {
  const double a = o.x, b = o.y;
  if (a >= std::abs(b)) return kSuperior;
  if (-a >= std::abs(b)) return kInferior;
  return b > 0 ? kNasal : kTemporal;
}

struct DiskArea {
  double diameter_mm = 0.0;
  double area_mm2 = 0.0;                // sum of the quarters
  std::array<double, 4> quarters_mm2{};  // superior, nasal, inferior, temporal
};

// Atrophy area inside fovea-centred disks; a pixel counts when its centre
// lies within the radius.
inline std::vector<DiskArea> disk_areas(const Mask& m, Vec2 fovea, PixelSize px, const MeasureConfig& cfg = {}) {
  std::vector<DiskArea> out;
  for (double d : cfg.disk_diameters_mm) {
    if (!(d > 0)) throw Error("disk diameters must be positive");
    const double r2 = d * d / 4.0;
    std::array<long, 4> count{};
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        if (!m(r, c)) continue;
        const Vec2 o = fovea_offset(r, c, fovea, px, cfg.eye);
        if (o.x * o.x + o.y * o.y <= r2) ++count[quarter_of(o)];
      }
    DiskArea a;
    a.diameter_mm = d;
    for (int q = 0; q < 4; ++q) {
      a.quarters_mm2[static_cast<std::size_t>(q)] = static_cast<double>(count[static_cast<std::size_t>(q)]) * px.area();
      a.area_mm2 += a.quarters_mm2[static_cast<std::size_t>(q)];
    }
    out.push_back(a);
  }
  return out;
}

// ------------------------------------------------------------- directions --

inline constexpr std::array<const char*, 8> kCompassNames{"superior", "superonasal",   "nasal",    "inferonasal",
                                                          "inferior", "inferotemporal", "temporal", "superotemporal"};

// Unit vectors in (up, nasal) coordinates.
inline std::array<Vec2, 8> compass_directions() {
  const double s = std::sqrt(0.5);
  return {{{1, 0}, {s, s}, {0, 1}, {-s, s}, {-1, 0}, {-s, -s}, {0, -1}, {s, -s}}};
}

struct Extents {
  std::array<double, 8> compass{};  // max projection of pixel centres, mm
  double fovea_distance = 0.0;      // min pixel-centre distance to the fovea, mm
};

inline std::optional<Extents> extents(const std::vector<Lesion>& ls, Vec2 fovea, PixelSize px, Eye e) {
  std::optional<Extents> out;
  const auto dirs = compass_directions();
  for (const Lesion& l : ls)
    for (const Pixel& p : l.pixels) {
      const Vec2 o = fovea_offset(p.r, p.c, fovea, px, e);
      if (!out) {
        out.emplace();
        out->compass.fill(-1e300);
        out->fovea_distance = 1e300;
      }
      for (std::size_t k = 0; k < 8; ++k) out->compass[k] = std::max(out->compass[k], dot(o, dirs[k]));
      out->fovea_distance = std::min(out->fovea_distance, norm(o));
    }
  return out;
}

struct DirectionalRates {
  std::array<std::optional<double>, 8> compass{};  // mm/yr, outward growth positive
  std::optional<double> inner_radial;              // mm/yr, growth towards the fovea positive
};

inline DirectionalRates directional_rates(const std::vector<Lesion>& prior, const std::vector<Lesion>& current,
                                          Vec2 fovea, PixelSize px, double years, Eye e = Eye::right) {
  if (!(years > 0)) throw Error("elapsed time must be positive");
  DirectionalRates out;
  const auto a = extents(prior, fovea, px, e), b = extents(current, fovea, px, e);
  if (!a || !b) return out;
  for (std::size_t k = 0; k < 8; ++k) out.compass[k] = (b->compass[k] - a->compass[k]) / years;
  out.inner_radial = (a->fovea_distance - b->fovea_distance) / years;
  return out;
}

// ----------------------------------------------------------- measurements --

struct LesionShape {
  int id = 0;
  double area_mm2 = 0.0;
  double perimeter_mm = 0.0;
  double circularity = 0.0;
  Feret feret;
  double fovea_distance_mm = 0.0;
};

struct LesionMeasurements {
  double area_mm2 = 0.0;
  double perimeter_mm = 0.0;
  std::optional<double> circularity;  // absent without lesions
  int focality = 0;
  std::optional<Feret> feret;  // over all lesions together
  std::optional<double> fovea_distance_mm;
  std::vector<DiskArea> disks;
  std::vector<LesionShape> lesions;
  double region_area_mm2 = 0.0;  // area the lesions were measured in
  std::optional<double> burden;  // area / region area
};

inline int focality_index(const std::vector<Lesion>& ls, double min_area_mm2 = kMinLesionAreaMm2) {
  return static_cast<int>(filter_lesions(ls, min_area_mm2).size());
}

// Measures the lesions of one study; small lesions are dropped first.
inline LesionMeasurements measure(const std::vector<Lesion>& all, int rows, int cols, Vec2 fovea, PixelSize px,
                                  const MeasureConfig& cfg = {}, const Mask* region = nullptr) {
  const std::vector<Lesion> ls = filter_lesions(all, cfg.min_area_mm2);
  LesionMeasurements m;
  std::vector<Pixel> every;
  for (const Lesion& l : ls) {
    LesionShape s;
    s.id = l.id;
    s.area_mm2 = static_cast<double>(l.size()) * px.area();
    s.perimeter_mm = perimeter_mm(l.pixels, px);
    s.circularity = circularity(s.area_mm2, s.perimeter_mm);
    s.feret = feret(l.boundary, px);
    s.fovea_distance_mm = extents({l}, fovea, px, cfg.eye)->fovea_distance;
    m.area_mm2 += s.area_mm2;
    m.perimeter_mm += s.perimeter_mm;
    m.lesions.push_back(s);
    every.insert(every.end(), l.boundary.begin(), l.boundary.end());
  }
  m.focality = static_cast<int>(ls.size());
  if (!ls.empty()) {
    m.circularity = circularity(m.area_mm2, m.perimeter_mm);
    m.feret = feret(every, px);
    m.fovea_distance_mm = extents(ls, fovea, px, cfg.eye)->fovea_distance;
  }
  m.disks = disk_areas(lesion_mask(ls, rows, cols), fovea, px, cfg);
  if (region) {
    m.region_area_mm2 = static_cast<double>(count_nonzero(*region)) * px.area();
    if (m.region_area_mm2 > 0) m.burden = m.area_mm2 / m.region_area_mm2;
  }
  return m;
}

// ----------------------------------------------------------------- report --

struct StudyLesions {
  std::string study_id;
  StudyMeta meta;
  Mask mask;  // atrophy on the study's own IR grid
};

struct ProgressionReport {
  std::string prior_id, current_id;
  std::string prior_date, current_date;
  Eye eye = Eye::right;
  double elapsed_years = 0.0;
  Rect common_fov;
  LesionMeasurements prior, current;  // both in the current frame, inside the common FOV
  int delta_focality = 0;
  double areal_rate = 0.0;  // mm²/yr
  std::vector<DiskArea> disk_rates;  // mm²/yr per disk and quarter
  DirectionalRates directional;
  std::optional<double> mean_outward_rate;
  std::optional<double> mean_inward_rate;
  std::optional<double> mean_feret_rate;
};

// Prior lesions are warped into the current frame and both studies are
// measured inside the common FOV.
inline ProgressionReport build_report(const StudyLesions& prior, const StudyLesions& current,
                                      const RigidTransform2D& t_ir, const MeasureConfig& cfg = {}) {
  ProgressionReport rep;
  rep.prior_id = prior.study_id;
  rep.current_id = current.study_id;
  rep.prior_date = prior.meta.acquired_at;
  rep.current_date = current.meta.acquired_at;
  rep.eye = cfg.eye;
  rep.elapsed_years = elapsed_years(prior.meta.acquired_at, current.meta.acquired_at);
  if (!(rep.elapsed_years > 0)) throw Error("current study is not later than the prior study");
  const int R = current.meta.ir_rows, C = current.meta.ir_cols;
  if (current.mask.rows() != R || current.mask.cols() != C) throw Error("current lesion mask does not match its IR image");
  if (prior.mask.rows() != prior.meta.ir_rows || prior.mask.cols() != prior.meta.ir_cols)
    throw Error("prior lesion mask does not match its IR image");
  rep.common_fov = common_fov(prior.meta, current.meta, t_ir);
  const Mask region = rect_mask(rep.common_fov, R, C);
  const PixelSize px = PixelSize::of(current.meta);
  const Vec2 fovea = current.meta.fovea;

  const Mask pm = mask_and(warp_mask(prior.mask, t_ir, R, C), region);
  const Mask cm = mask_and(current.mask, region);
  const auto pl = filter_lesions(connected_components(pm, px.area()).lesions, cfg.min_area_mm2);
  const auto cl = filter_lesions(connected_components(cm, px.area()).lesions, cfg.min_area_mm2);
  rep.prior = measure(pl, R, C, fovea, px, cfg, &region);
  rep.current = measure(cl, R, C, fovea, px, cfg, &region);

  const double y = rep.elapsed_years;
  rep.delta_focality = rep.current.focality - rep.prior.focality;
  rep.areal_rate = (rep.current.area_mm2 - rep.prior.area_mm2) / y;
  for (std::size_t d = 0; d < rep.current.disks.size(); ++d) {
    DiskArea r;
    r.diameter_mm = rep.current.disks[d].diameter_mm;
    r.area_mm2 = (rep.current.disks[d].area_mm2 - rep.prior.disks[d].area_mm2) / y;
    for (std::size_t q = 0; q < 4; ++q)
      r.quarters_mm2[q] = (rep.current.disks[d].quarters_mm2[q] - rep.prior.disks[d].quarters_mm2[q]) / y;
    rep.disk_rates.push_back(r);
  }
  rep.directional = directional_rates(pl, cl, fovea, px, y, cfg.eye);
  if (rep.directional.inner_radial) {
    double s = 0;
    for (const auto& v : rep.directional.compass) s += std::max(0.0, *v);
    rep.mean_outward_rate = s / 8.0;
    rep.mean_inward_rate = rep.directional.inner_radial;
  }
  if (rep.prior.feret && rep.current.feret) {
    const double a = 0.5 * (rep.prior.feret->max_mm + rep.prior.feret->min_mm);
    const double b = 0.5 * (rep.current.feret->max_mm + rep.current.feret->min_mm);
    rep.mean_feret_rate = (b - a) / y;
  }
  return rep;
}

// ---------------------------------------------------------------- export --

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json disks_json(const std::vector<DiskArea>& ds) {
  nlohmann::json a = nlohmann::json::array();
  for (const DiskArea& d : ds) {
    nlohmann::json q = nlohmann::json::object();
    for (std::size_t k = 0; k < 4; ++k) q[kQuarterNames[k]] = d.quarters_mm2[k];
    a.push_back({{"diameter_mm", d.diameter_mm}, {"area", d.area_mm2}, {"quarters", q}});
  }
  return a;
}

inline nlohmann::json to_json(const LesionMeasurements& m) {
  nlohmann::json ls = nlohmann::json::array();
  for (const LesionShape& s : m.lesions)
    ls.push_back({{"id", s.id},
                  {"area_mm2", s.area_mm2},
                  {"perimeter_mm", s.perimeter_mm},
                  {"circularity", s.circularity},
                  {"feret_max_mm", s.feret.max_mm},
                  {"feret_min_mm", s.feret.min_mm},
                  {"fovea_distance_mm", s.fovea_distance_mm}});
  return {{"area_mm2", m.area_mm2},
          {"perimeter_mm", m.perimeter_mm},
          {"circularity", opt_json(m.circularity)},
          {"focality_index", m.focality},
          {"feret_max_mm", m.feret ? nlohmann::json(m.feret->max_mm) : nlohmann::json()},
          {"feret_min_mm", m.feret ? nlohmann::json(m.feret->min_mm) : nlohmann::json()},
          {"fovea_distance_mm", opt_json(m.fovea_distance_mm)},
          {"disks_mm2", disks_json(m.disks)},
          {"region_area_mm2", m.region_area_mm2},
          {"burden", opt_json(m.burden)},
          {"lesions", ls}};
}

inline nlohmann::json to_json(const ProgressionReport& r) {
  nlohmann::json dir = nlohmann::json::object();
  for (std::size_t k = 0; k < 8; ++k) dir[kCompassNames[k]] = opt_json(r.directional.compass[k]);
  dir["inner_radial"] = opt_json(r.directional.inner_radial);
  return {{"prior_study", r.prior_id},
          {"current_study", r.current_id},
          {"prior_date", r.prior_date},
          {"current_date", r.current_date},
          {"laterality", to_string(r.eye)},
          {"elapsed_years", r.elapsed_years},
          {"common_fov", {r.common_fov.x0, r.common_fov.y0, r.common_fov.h, r.common_fov.w}},
          {"prior", to_json(r.prior)},
          {"current", to_json(r.current)},
          {"progression",
           {{"delta_focality", r.delta_focality},
            {"areal_rate_mm2_per_yr", r.areal_rate},
            {"disk_rates_mm2_per_yr", disks_json(r.disk_rates)},
            {"directional_rates_mm_per_yr", dir},
            {"mean_outward_rate_mm_per_yr", opt_json(r.mean_outward_rate)},
            {"mean_inward_rate_mm_per_yr", opt_json(r.mean_inward_rate)},
            {"mean_feret_rate_mm_per_yr", opt_json(r.mean_feret_rate)}}}};
}

namespace report_detail {

inline std::string num(const std::optional<double>& v, int prec = 4) {
  if (!v) return "n/a";
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, *v);
  return b;
}

}  // namespace report_detail

inline std::string report_text(const ProgressionReport& r) {
  using report_detail::num;
  std::ostringstream o;
  auto row = [&](const std::string& k, const std::string& a, const std::string& b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-26s %14s %14s\n", k.c_str(), a.c_str(), b.c_str());
    o << buf;
  };
  o << "Atrophy report: " << r.prior_id << " (" << r.prior_date << ") -> " << r.current_id << " (" << r.current_date
    << ")\n";
  o << "Elapsed " << num(r.elapsed_years, 3) << " yr, laterality " << to_string(r.eye)
    << " (nasal/temporal follow this setting)\n\n";
  row("", "prior", "current");
  row("area [mm2]", num(r.prior.area_mm2), num(r.current.area_mm2));
  for (std::size_t d = 0; d < r.current.disks.size(); ++d)
    row("area in " + num(r.current.disks[d].diameter_mm, 0) + " mm disk [mm2]", num(r.prior.disks[d].area_mm2),
        num(r.current.disks[d].area_mm2));
  row("perimeter [mm]", num(r.prior.perimeter_mm), num(r.current.perimeter_mm));
  row("circularity", num(r.prior.circularity), num(r.current.circularity));
  row("focality index", std::to_string(r.prior.focality), std::to_string(r.current.focality));
  auto fmax = [](const LesionMeasurements& m) { return m.feret ? std::optional(m.feret->max_mm) : std::nullopt; };
  auto fmin = [](const LesionMeasurements& m) { return m.feret ? std::optional(m.feret->min_mm) : std::nullopt; };
  row("Feret max [mm]", num(fmax(r.prior)), num(fmax(r.current)));
  row("Feret min [mm]", num(fmin(r.prior)), num(fmin(r.current)));
  row("fovea distance [mm]", num(r.prior.fovea_distance_mm), num(r.current.fovea_distance_mm));
  row("burden", num(r.prior.burden), num(r.current.burden));
  o << "\nProgression\n";
  row("change in focality", std::to_string(r.delta_focality), "");
  row("areal rate [mm2/yr]", num(r.areal_rate), "");
  row("mean outward [mm/yr]", num(r.mean_outward_rate), "");
  row("mean inward [mm/yr]", num(r.mean_inward_rate), "");
  row("mean Feret rate [mm/yr]", num(r.mean_feret_rate), "");
  for (std::size_t k = 0; k < 8; ++k) row(std::string(kCompassNames[k]) + " [mm/yr]", num(r.directional.compass[k]), "");
  row("inner radial [mm/yr]", num(r.directional.inner_radial), "");
  return o.str();
}

inline std::string report_csv_header() {
  return "prior_study,current_study,elapsed_years,laterality,prior_area_mm2,current_area_mm2,delta_focality,"
         "areal_rate_mm2_per_yr,mean_outward_mm_per_yr,mean_inward_mm_per_yr,mean_feret_rate_mm_per_yr,"
         "prior_burden,current_burden";
}

inline std::string report_csv_row(const ProgressionReport& r) {
  auto f = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char b[64];
    std::snprintf(b, sizeof b, "%.17g", *v);
    return std::string(b);
  };
  std::ostringstream o;
  o << r.prior_id << ',' << r.current_id << ',' << f(r.elapsed_years) << ',' << to_string(r.eye) << ','
    << f(r.prior.area_mm2) << ',' << f(r.current.area_mm2) << ',' << r.delta_focality << ',' << f(r.areal_rate) << ','
    << f(r.mean_outward_rate) << ',' << f(r.mean_inward_rate) << ',' << f(r.mean_feret_rate) << ','
    << f(r.prior.burden) << ',' << f(r.current.burden);
  return o.str();
}

}  // namespace octchange
