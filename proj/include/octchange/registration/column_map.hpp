#pragma once

#include <optional>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/studyio/meta.hpp"

namespace octchange {

// OCT column coordinates: x = slice index, y = column within the slice.
struct OctColumn {
  int slice = 0;
  int column = 0;
  friend bool operator==(const OctColumn&, const OctColumn&) = default;
};

// T_OCT→IR without range checks; accepts real-valued OCT coordinates.
inline Vec2 ir_from_oct(const StudyMeta& m, double x, double y) {
  return {m.fov_origin.x + m.fov_extent.x * (x / m.n_slices), m.fov_origin.y + m.fov_extent.y * (y / m.oct_width)};
}

// Inverse of ir_from_oct, real-valued.
inline Vec2 oct_from_ir(const StudyMeta& m, Vec2 p) {
  return {m.n_slices * (p.x - m.fov_origin.x) / m.fov_extent.x, m.oct_width * (p.y - m.fov_origin.y) / m.fov_extent.y};
}

inline Vec2 oct_to_ir(Vec2 col, const StudyMeta& m) {
  if (!(col.x >= 0 && col.x < m.n_slices && col.y >= 0 && col.y < m.oct_width))
    throw Error("OCT column out of range");
  return ir_from_oct(m, col.x, col.y);
}

inline Vec2 oct_to_ir(OctColumn c, const StudyMeta& m) {
  return oct_to_ir(Vec2{static_cast<double>(c.slice), static_cast<double>(c.column)}, m);
}

// Nearest OCT column for an IR point, or nullopt outside the scan.
inline std::optional<OctColumn> nearest_column(const StudyMeta& m, Vec2 ir) {
  const Vec2 o = oct_from_ir(m, ir);
  const long xs = round_half_away(o.x), ys = round_half_away(o.y);
  if (xs < 0 || xs >= m.n_slices || ys < 0 || ys >= m.oct_width) return std::nullopt;
  return OctColumn{static_cast<int>(xs), static_cast<int>(ys)};
}

struct ColumnMatch {
  OctColumn prior;
  OctColumn current;
  Vec2 ir_point;  // mapped location in the current IR image
};

// T_OCT^{P→C} = (T^C_{OCT→IR})⁻¹ ∘ T_IR^{P→C} ∘ T^P_{OCT→IR}, snapped to the
// nearest current slice and column. No intensity interpolation happens.
class ColumnMatcher {
 public:
  ColumnMatcher(StudyMeta prior, StudyMeta current, RigidTransform2D t_ir)
      : prior_(std::move(prior)), current_(std::move(current)), t_ir_(t_ir) {}

  // Real-valued current OCT coordinates of a prior column.
  Vec2 map(OctColumn p) const {
    const Vec2 ir_p = oct_to_ir(p, prior_);
    return oct_from_ir(current_, t_ir_(ir_p));
  }

  // nullopt: the column falls outside the current FOV.
  std::optional<ColumnMatch> match(OctColumn p) const {
    const Vec2 ir_c = t_ir_(oct_to_ir(p, prior_));
    const auto c = nearest_column(current_, ir_c);
    if (!c) return std::nullopt;
    return ColumnMatch{p, *c, ir_c};
  }

  // Matches for every prior column in row-major order.
  std::vector<std::optional<ColumnMatch>> all() const {
    std::vector<std::optional<ColumnMatch>> out;
    out.reserve(static_cast<std::size_t>(prior_.n_slices) * prior_.oct_width);
    for (int s = 0; s < prior_.n_slices; ++s)
      for (int c = 0; c < prior_.oct_width; ++c) out.push_back(match({s, c}));
    return out;
  }

  const StudyMeta& prior() const { return prior_; }
  const StudyMeta& current() const { return current_; }
  const RigidTransform2D& transform() const { return t_ir_; }

 private:
  StudyMeta prior_;
  StudyMeta current_;
  RigidTransform2D t_ir_;
};

// Current slice matched to prior slice k: the slice its centre column maps to.
inline std::optional<int> matched_slice(const ColumnMatcher& m, int k) {
  if (k < 0 || k >= m.prior().n_slices) throw Error("slice " + std::to_string(k) + " out of range");
  const auto mt = m.match({k, m.prior().oct_width / 2});
  if (!mt) return std::nullopt;
  return mt->current.slice;
}

inline ColumnMatcher match_columns(const StudyMeta& prior, const StudyMeta& current, const RigidTransform2D& t_ir) {
  validate(prior);
  validate(current);
  return ColumnMatcher(prior, current, t_ir);
}

}  // namespace octchange
