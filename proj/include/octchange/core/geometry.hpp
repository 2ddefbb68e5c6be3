#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "octchange/core/error.hpp"

namespace octchange {

// A point in an IR image. x is the row coordinate (slice axis), y the column
// coordinate, matching the OCT convention where x indexes slices and y columns.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

// p -> R(theta) p + t
struct RigidTransform2D {
  double theta = 0.0;
  Vec2 t{};

  static RigidTransform2D identity() { return {}; }

  // Rotation by `theta` about `center` followed by a translation `shift`.
  static RigidTransform2D about(Vec2 center, double theta, Vec2 shift) {
    RigidTransform2D r{theta, {}};
    const Vec2 rc = r.rotate(center);
    r.t = center + shift - rc;
    return r;
  }

  Vec2 rotate(Vec2 p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
  }

  Vec2 operator()(Vec2 p) const { return rotate(p) + t; }

  RigidTransform2D inverse() const {
    RigidTransform2D inv{-theta, {}};
    inv.t = -1.0 * inv.rotate(t);
    return inv;
  }

  double determinant() const {
    const double c = std::cos(theta), s = std::sin(theta);
    return c * c + s * s;
  }
};

// (a ∘ b)(p) = a(b(p))
inline RigidTransform2D compose(const RigidTransform2D& a, const RigidTransform2D& b) {
  RigidTransform2D r{a.theta + b.theta, {}};
  r.t = a.rotate(b.t) + a.t;
  return r;
}

// Half-open axis-aligned rectangle [x0, x0+h) × [y0, y0+w) in IR pixels.
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double h = 0.0;
  double w = 0.0;

  double x1() const { return x0 + h; }
  double y1() const { return y0 + w; }
  double area() const { return h * w; }
  bool empty() const { return h <= 0.0 || w <= 0.0; }
  bool contains(Vec2 p) const { return p.x >= x0 && p.x < x1() && p.y >= y0 && p.y < y1(); }
  friend bool operator==(const Rect&, const Rect&) = default;
};

inline Rect intersect(const Rect& a, const Rect& b) {
  const double x0 = std::max(a.x0, b.x0), y0 = std::max(a.y0, b.y0);
  const double x1 = std::min(a.x1(), b.x1()), y1 = std::min(a.y1(), b.y1());
  return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

// Axis-aligned bounding box of a rectangle mapped through a rigid transform.
inline Rect transformed_bounds(const Rect& r, const RigidTransform2D& T) {
  const Vec2 corners[4] = {{r.x0, r.y0}, {r.x1(), r.y0}, {r.x0, r.y1()}, {r.x1(), r.y1()}};
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const Vec2& c : corners) {
    const Vec2 p = T(c);
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  return {xmin, ymin, xmax - xmin, ymax - ymin};
}

// Round half away from zero.
inline long round_half_away(double v) { return static_cast<long>(std::lround(v)); }

}  // namespace octchange
