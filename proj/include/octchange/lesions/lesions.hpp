#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/core/hash.hpp"
#include "octchange/core/image.hpp"
#include "octchange/core/png_io.hpp"
#include "octchange/lesions/segments.hpp"
#include "octchange/registration/column_map.hpp"
#include "octchange/studyio/meta.hpp"

namespace octchange {

// IR mask of a segments matrix. Every IR pixel whose centre falls in the
// footprint of an atrophic column is set; a slice paints a band one slice
// spacing tall, so adjacent annotated slices meet without gaps.
inline Mask project_to_ir(const SegmentsMatrix& m, const StudyMeta& meta) {
  if (m.n_slices() != meta.n_slices || m.width() != meta.oct_width)
    throw Error("segments matrix " + std::to_string(m.n_slices()) + "x" + std::to_string(m.width()) +
                " does not match the scan " + std::to_string(meta.n_slices) + "x" + std::to_string(meta.oct_width));
  Mask out(meta.ir_rows, meta.ir_cols, 0);
  const Rect fov = meta.fov();
  const int r0 = std::max(0, static_cast<int>(std::floor(fov.x0)));
  const int r1 = std::min(meta.ir_rows, static_cast<int>(std::ceil(fov.x1())));
  const int c0 = std::max(0, static_cast<int>(std::floor(fov.y0)));
  const int c1 = std::min(meta.ir_cols, static_cast<int>(std::ceil(fov.y1())));
  std::vector<int> col_of(static_cast<std::size_t>(std::max(0, c1 - c0)), -1);
  for (int c = c0; c < c1; ++c) {
    const double y = std::floor((c + 0.5 - fov.y0) * meta.oct_width / fov.w);
    if (y >= 0 && y < meta.oct_width) col_of[static_cast<std::size_t>(c - c0)] = static_cast<int>(y);
  }
  for (int r = r0; r < r1; ++r) {
    const double xs = std::floor((r + 0.5 - fov.x0) * meta.n_slices / fov.h);
    if (xs < 0 || xs >= meta.n_slices) continue;
    const int x = static_cast<int>(xs);
    for (int c = c0; c < c1; ++c) {
      const int y = col_of[static_cast<std::size_t>(c - c0)];
      if (y >= 0 && m.at(x, y)) out(r, c) = 1;
    }
  }
  return out;
}

struct Pixel {
  int r = 0;
  int c = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

struct Lesion {
  int id = 0;
  std::vector<Pixel> pixels;    // row-major order
  std::vector<Pixel> boundary;  // pixels with a 4-neighbour outside the lesion
  double area_mm2 = 0.0;
  Rect bbox;                    // pixel-edge bounding box
  Vec2 centroid;                // mean pixel centre

  std::size_t size() const { return pixels.size(); }
};

inline void finish_lesion(Lesion& l, const Mask& member, double px_area_mm2) {
  std::sort(l.pixels.begin(), l.pixels.end());
  int rmin = 1 << 30, rmax = -1, cmin = 1 << 30, cmax = -1;
  double sr = 0, sc = 0;
  l.boundary.clear();
  for (const Pixel& p : l.pixels) {
    rmin = std::min(rmin, p.r);
    rmax = std::max(rmax, p.r);
    cmin = std::min(cmin, p.c);
    cmax = std::max(cmax, p.c);
    sr += p.r + 0.5;
    sc += p.c + 0.5;
    const std::array<Pixel, 4> nb{{{p.r - 1, p.c}, {p.r + 1, p.c}, {p.r, p.c - 1}, {p.r, p.c + 1}}};
    for (const Pixel& q : nb)
      if (q.r < 0 || q.c < 0 || q.r >= member.rows() || q.c >= member.cols() || !member(q.r, q.c)) {
        l.boundary.push_back(p);
        break;
      }
  }
  const double n = static_cast<double>(l.pixels.size());
  l.area_mm2 = n * px_area_mm2;
  l.bbox = {double(rmin), double(cmin), double(rmax - rmin + 1), double(cmax - cmin + 1)};
  l.centroid = {sr / n, sc / n};
}

struct Components {
  LabelImage labels;  // 0 = background, k = lesion id
  std::vector<Lesion> lesions;
};

// Connected components in raster-scan order of their first pixel.
inline Components connected_components(const Mask& mask, double px_area_mm2, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8) throw Error("connectivity must be 4 or 8");
  Components out{LabelImage(mask.rows(), mask.cols(), 0), {}};
  std::vector<Pixel> stack;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c) || out.labels(r, c)) continue;
      if (out.lesions.size() >= 65535) throw Error("too many lesions for a 16-bit label image");
      Lesion l;
      l.id = static_cast<int>(out.lesions.size()) + 1;
      const auto id = static_cast<std::uint16_t>(l.id);
      out.labels(r, c) = id;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        l.pixels.push_back(p);
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || (connectivity == 4 && dr != 0 && dc != 0)) continue;
            const int rr = p.r + dr, cc = p.c + dc;
            if (rr < 0 || cc < 0 || rr >= mask.rows() || cc >= mask.cols()) continue;
            if (!mask(rr, cc) || out.labels(rr, cc)) continue;
            out.labels(rr, cc) = id;
            stack.push_back({rr, cc});
          }
      }
      finish_lesion(l, mask, px_area_mm2);
      out.lesions.push_back(std::move(l));
    }
  return out;
}

inline constexpr double kMinLesionAreaMm2 = 0.05;

// Lesions strictly larger than min_area; ids are kept.
inline std::vector<Lesion> filter_lesions(const std::vector<Lesion>& in, double min_area_mm2 = kMinLesionAreaMm2) {
  std::vector<Lesion> out;
  for (const Lesion& l : in)
    if (l.area_mm2 > min_area_mm2) out.push_back(l);
  return out;
}

inline Mask lesion_mask(const std::vector<Lesion>& ls, int rows, int cols) {
  Mask m(rows, cols, 0);
  for (const Lesion& l : ls)
    for (const Pixel& p : l.pixels) m(p.r, p.c) = 1;
  return m;
}

// Current FOV ∩ bounding box of the prior FOV mapped into the current frame.
inline Rect common_fov(const StudyMeta& prior, const StudyMeta& current, const RigidTransform2D& t_ir) {
  const Rect r = intersect(current.fov(), transformed_bounds(prior.fov(), t_ir));
  if (r.empty()) throw Error("disjoint FOVs");
  return r;
}

// Pixels whose centre lies inside the rectangle.
inline Mask rect_mask(const Rect& r, int rows, int cols) {
  Mask m(rows, cols, 0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      if (r.contains({i + 0.5, j + 0.5})) m(i, j) = 1;
  return m;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("mask size mismatch");
  Mask m(a.rows(), a.cols(), 0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) m(i, j) = (a(i, j) && b(i, j)) ? 1 : 0;
  return m;
}

struct LesionMap {
  std::string study_id;
  LabelImage labels;
  std::vector<Lesion> lesions;
};

// Lesion map of one study: project, label, drop small lesions, relabel 1..n.
inline LesionMap lesion_map(const SegmentsMatrix& m, const StudyMeta& meta, double min_area_mm2 = kMinLesionAreaMm2,
                            const Mask* region = nullptr) {
  Mask ir = project_to_ir(m, meta);
  if (region) ir = mask_and(ir, *region);
  Components cc = connected_components(ir, meta.ir_pixel_area_mm2());
  LesionMap out{m.study_id, LabelImage(meta.ir_rows, meta.ir_cols, 0), filter_lesions(cc.lesions, min_area_mm2)};
  for (std::size_t k = 0; k < out.lesions.size(); ++k) {
    out.lesions[k].id = static_cast<int>(k) + 1;
    for (const Pixel& p : out.lesions[k].pixels) out.labels(p.r, p.c) = static_cast<std::uint16_t>(k + 1);
  }
  return out;
}

inline nlohmann::json lesions_json(const LesionMap& lm) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Lesion& l : lm.lesions)
    arr.push_back({{"id", l.id},
                   {"pixels", l.pixels.size()},
                   {"area_mm2", l.area_mm2},
                   {"bbox", {l.bbox.x0, l.bbox.y0, l.bbox.h, l.bbox.w}},
                   {"centroid", {l.centroid.x, l.centroid.y}}});
  return {{"study_id", lm.study_id}, {"rows", lm.labels.rows()}, {"cols", lm.labels.cols()}, {"lesions", arr}};
}

// <stem>.png (16-bit labels) + <stem>.json
inline void export_lesion_map(const LesionMap& lm, const std::filesystem::path& stem) {
  png::write_labels16(stem.string() + ".png", lm.labels);
  write_file_bytes(stem.string() + ".json", lesions_json(lm).dump(2) + "\n");
}

}  // namespace octchange
