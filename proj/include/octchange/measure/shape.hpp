#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cmath>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/lesions/lesions.hpp"

namespace octchange {

// Physical size of one IR pixel.
struct PixelSize {
  double h_mm = 0.02;  // along rows
  double w_mm = 0.02;  // along columns

  static PixelSize of(const StudyMeta& m) { return {m.ir_px_h_um * 1e-3, m.ir_px_w_um * 1e-3}; }
  double area() const { return h_mm * w_mm; }
};

// ---------------------------------------------------------------- perimeter --

namespace shape_detail {

// Direction codes on the pixel-corner lattice: 0 = +col, 1 = +row, 2 = -col, 3 = -row.
inline constexpr int kDr[4] = {0, 1, 0, -1};
inline constexpr int kDc[4] = {1, 0, -1, 0};

enum class Turn : std::uint8_t { straight, convex, concave };

struct Loop {
  std::vector<int> dirs;  // unit moves; vertex k sits between moves k-1 and k
};

// Closed crack contours of a pixel set, traversed with the region on the
// right. Where two pixels touch only at a corner the trace turns left, so an
// 8-connected lesion yields one outer loop.
inline std::vector<Loop> crack_loops(const std::vector<Pixel>& pixels) {
  if (pixels.empty()) return {};
  int r0 = pixels[0].r, r1 = r0, c0 = pixels[0].c, c1 = c0;
  for (const Pixel& p : pixels) {
    r0 = std::min(r0, p.r);
    r1 = std::max(r1, p.r);
    c0 = std::min(c0, p.c);
    c1 = std::max(c1, p.c);
  }
  const int H = r1 - r0 + 3, W = c1 - c0 + 3;  // one pixel of padding
  std::vector<std::uint8_t> in(static_cast<std::size_t>(H) * W, 0);
  auto at = [&](int r, int c) -> std::uint8_t& { return in[static_cast<std::size_t>(r) * W + c]; };
  for (const Pixel& p : pixels) at(p.r - r0 + 1, p.c - c0 + 1) = 1;

  // out[v] = bitset of outgoing directions at corner v, corners (H+1)×(W+1)
  const int CW = W + 1;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H + 1) * CW, 0);
  auto bit = [&](int r, int c, int d) { out[static_cast<std::size_t>(r) * CW + c] |= static_cast<std::uint8_t>(1u << d); };
  std::size_t n_edges = 0;
  for (int r = 1; r < H - 1; ++r)
    for (int c = 1; c < W - 1; ++c) {
      if (!at(r, c)) continue;
      if (!at(r - 1, c)) bit(r, c, 0), ++n_edges;
      if (!at(r, c + 1)) bit(r, c + 1, 1), ++n_edges;
      if (!at(r + 1, c)) bit(r + 1, c + 1, 2), ++n_edges;
      if (!at(r, c - 1)) bit(r + 1, c, 3), ++n_edges;
    }

  std::vector<Loop> loops;
  std::size_t used = 0;
  for (int r = 0; r <= H && used < n_edges; ++r)
    for (int c = 0; c <= W; ++c) {
      while (out[static_cast<std::size_t>(r) * CW + c]) {
        Loop loop;
        int vr = r, vc = c;
        int d = std::countr_zero(static_cast<unsigned>(out[static_cast<std::size_t>(r) * CW + c]));
        for (;;) {
          std::uint8_t& o = out[static_cast<std::size_t>(vr) * CW + vc];
          o = static_cast<std::uint8_t>(o & ~(1u << d));
          loop.dirs.push_back(d);
          ++used;
          vr += kDr[d];
          vc += kDc[d];
          const std::uint8_t next = out[static_cast<std::size_t>(vr) * CW + vc];
          if (!next) break;
          const int left = (d + 3) % 4;
          if (next & (1u << left)) d = left;
          else if (!(next & (1u << d))) d = std::countr_zero(static_cast<unsigned>(next));
        }
        loops.push_back(std::move(loop));
      }
    }
  return loops;
}

inline Turn turn(int in, int out) {
  if (in == out) return Turn::straight;
  return out == (in + 1) % 4 ? Turn::convex : Turn::concave;
}

}  // namespace shape_detail

// Length of the boundary polygon through pixel corners. The crack contour is
// followed and every convex corner that sits on a one-step stair (a concave
// neighbour and no convex neighbour) is cut by its chord; rectangles keep
// their corners, staircases become diagonals.
inline double perimeter_mm(const std::vector<Pixel>& pixels, PixelSize px) {
  using namespace shape_detail;
  double total = 0.0;
  for (const Loop& loop : crack_loops(pixels)) {
    const auto n = loop.dirs.size();
    auto len = [&](int d) { return (d % 2 == 0) ? px.w_mm : px.h_mm; };
    std::vector<Turn> t(n);
    for (std::size_t k = 0; k < n; ++k) t[k] = turn(loop.dirs[(k + n - 1) % n], loop.dirs[k]);
    for (std::size_t k = 0; k < n; ++k) total += len(loop.dirs[k]);
    for (std::size_t k = 0; k < n; ++k) {
      if (t[k] != Turn::convex) continue;
      const Turn a = t[(k + n - 1) % n], b = t[(k + 1) % n];
      if (a == Turn::convex || b == Turn::convex) continue;
      if (a != Turn::concave && b != Turn::concave) continue;
      const double l1 = len(loop.dirs[(k + n - 1) % n]), l2 = len(loop.dirs[k]);
      total -= l1 + l2 - std::hypot(l1, l2);
    }
  }
  return total;
}

inline double circularity(double area, double perimeter) {
  if (!(perimeter > 0.0)) throw Error("circularity needs a positive perimeter");
  if (area < 0.0) throw Error("circularity needs a non-negative area");
  return 4.0 * std::numbers::pi * area / (perimeter * perimeter);
}

// -------------------------------------------------------------------- Feret --

struct Feret {
  double max_mm = 0.0;
  double min_mm = 0.0;
};

// Pixel corners of the given pixels in mm, (row, col) order.
inline std::vector<Vec2> corner_points(const std::vector<Pixel>& pixels, PixelSize px) {
  std::vector<std::pair<int, int>> pts;
  pts.reserve(pixels.size() * 4);
  for (const Pixel& p : pixels)
    for (int dr = 0; dr <= 1; ++dr)
      for (int dc = 0; dc <= 1; ++dc) pts.emplace_back(p.r + dr, p.c + dc);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const auto& [r, c] : pts) out.push_back({r * px.h_mm, c * px.w_mm});
  return out;
}

// Counter-clockwise convex hull without collinear points (monotone chain).
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> h(2 * pts.size());
  std::size_t k = 0;
  for (const Vec2& p : pts) {
    while (k >= 2 && cross(h[k - 1] - h[k - 2], p - h[k - 2]) <= 0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 1] - h[k - 2], pts[i] - h[k - 2]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

// Rotating calipers over a convex polygon: the diameter from antipodal
// vertex pairs, the minimal width from edge-vertex pairs.
inline Feret calipers(const std::vector<Vec2>& hull) {
  const std::size_t n = hull.size();
  if (n == 0) return {};
  if (n == 1) return {0.0, 0.0};
  if (n == 2) return {norm(hull[1] - hull[0]), 0.0};
  Feret f{0.0, 1e300};
  std::size_t j = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = hull[i], b = hull[(i + 1) % n];
    const Vec2 e = b - a;
    auto height = [&](std::size_t k) { return cross(e, hull[k] - a); };
    while (height((j + 1) % n) > height(j)) j = (j + 1) % n;
    f.min_mm = std::min(f.min_mm, height(j) / norm(e));
    f.max_mm = std::max({f.max_mm, norm(hull[j] - a), norm(hull[j] - b)});
  }
  return f;
}

// Feret calipers of a pixel set, over the hull of its pixel corners.
inline Feret feret(const std::vector<Pixel>& pixels, PixelSize px) {
  if (pixels.empty()) return {};
  return calipers(convex_hull(corner_points(pixels, px)));
}

}  // namespace octchange
