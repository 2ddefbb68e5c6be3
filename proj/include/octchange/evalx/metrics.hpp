#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/lesions/lesions.hpp"
#include "octchange/lesions/segments.hpp"
#include "octchange/measure/shape.hpp"

namespace octchange::eval {

// ------------------------------------------------------------------ columns --

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;

  std::optional<double> precision() const { return tp + fp ? std::optional(double(tp) / double(tp + fp)) : std::nullopt; }
  std::optional<double> recall() const { return tp + fn ? std::optional(double(tp) / double(tp + fn)) : std::nullopt; }
  std::optional<double> f1() const {
    const auto p = precision(), r = recall();
    if (!p || !r || *p + *r == 0.0) return (p && r) ? std::optional(0.0) : std::nullopt;
    return 2 * *p * *r / (*p + *r);
  }
  double accuracy() const { return double(tp + tn) / double(std::max(1L, tp + fp + fn + tn)); }
};

inline Confusion confusion(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) throw Error("prediction and ground truth differ in length");
  Confusion c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    (p ? (g ? c.tp : c.fp) : (g ? c.fn : c.tn))++;
  }
  return c;
}

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;  // ROC: false positive rate; PR: recall
  double y = 0.0;  // ROC: true positive rate; PR: precision
};

namespace metrics_detail {

struct Group {
  double score;
  long pos, neg;
};

// Distinct scores in descending order with their class counts.
inline std::vector<Group> groups(std::span<const double> s, std::span<const int> y) {
  if (s.size() != y.size()) throw Error("scores and labels differ in length");
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (double v : s)
    if (!std::isfinite(v)) throw Error("non-finite score");
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<Group> g;
  for (std::size_t i : idx) {
    if (g.empty() || g.back().score != s[i]) g.push_back({s[i], 0, 0});
    (y[i] ? g.back().pos : g.back().neg)++;
  }
  return g;
}

}  // namespace metrics_detail

// Area under the ROC curve: the fraction of (positive, negative) pairs ranked
// correctly, ties counting one half. Absent when only one class is present.
inline std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  const auto g = metrics_detail::groups(scores, labels);
  long P = 0, N = 0;
  for (const auto& x : g) P += x.pos, N += x.neg;
  if (P == 0 || N == 0) return std::nullopt;
  // twice the concordant count, kept integral
  std::int64_t twice = 0;
  long neg_below = N;
  for (const auto& x : g) {
    neg_below -= x.neg;
    twice += 2 * std::int64_t(x.pos) * neg_below + std::int64_t(x.pos) * x.neg;
  }
  return double(twice) / (2.0 * double(P) * double(N));
}

// ROC points from (0, 0), one per distinct score, descending thresholds.
inline std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto g = metrics_detail::groups(scores, labels);
  long P = 0, N = 0;
  for (const auto& x : g) P += x.pos, N += x.neg;
  std::vector<CurvePoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  long tp = 0, fp = 0;
  for (const auto& x : g) {
    tp += x.pos;
    fp += x.neg;
    out.push_back({x.score, N ? double(fp) / N : 0.0, P ? double(tp) / P : 0.0});
  }
  return out;
}

// Precision-recall points, one per distinct score, descending thresholds.
inline std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto g = metrics_detail::groups(scores, labels);
  long P = 0;
  for (const auto& x : g) P += x.pos;
  std::vector<CurvePoint> out;
  long tp = 0, n = 0;
  for (const auto& x : g) {
    tp += x.pos;
    n += x.pos + x.neg;
    out.push_back({x.score, P ? double(tp) / P : 0.0, double(tp) / n});
  }
  return out;
}

// Trapezoid area under a curve given in order of increasing x.
inline double trapezoid(const std::vector<CurvePoint>& c) {
  double a = 0.0;
  for (std::size_t i = 1; i < c.size(); ++i) a += (c[i].x - c[i - 1].x) * (c[i].y + c[i - 1].y) / 2;
  return a;
}

struct ColumnMetrics {
  Confusion counts;
  std::optional<double> auc;
  std::vector<CurvePoint> roc, pr;
};

inline ColumnMetrics column_metrics(std::span<const double> scores, std::span<const int> gt, double th) {
  std::vector<int> pred(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= th ? 1 : 0;
  return {confusion(pred, gt), auc(scores, gt), roc_curve(scores, gt), pr_curve(scores, gt)};
}

// --------------------------------------------------------------- detection --

struct DetectionPR {
  std::optional<double> precision;  // predicted units touching any GT unit
  std::optional<double> recall;     // GT units touched by any predicted unit
  int n_pred = 0, n_gt = 0, pred_hit = 0, gt_hit = 0;
};

inline DetectionPR detection_pr(int n_pred, int n_gt, int pred_hit, int gt_hit) {
  DetectionPR d{std::nullopt, std::nullopt, n_pred, n_gt, pred_hit, gt_hit};
  if (n_pred) d.precision = double(pred_hit) / n_pred;
  if (n_gt) d.recall = double(gt_hit) / n_gt;
  return d;
}

inline bool overlaps(const Segment& a, const Segment& b) {
  return a.slice == b.slice && a.left <= b.right && b.left <= a.right;
}

// A unit is detected when it shares at least one column with a unit of the
// other set.
inline DetectionPR segment_pr(const std::vector<Segment>& pred, const std::vector<Segment>& gt) {
  std::map<int, std::vector<const Segment*>> by_slice;
  for (const Segment& g : gt) by_slice[g.slice].push_back(&g);
  std::vector<char> gt_hit(gt.size(), 0);
  int pred_hit = 0;
  for (const Segment& p : pred) {
    bool hit = false;
    if (auto it = by_slice.find(p.slice); it != by_slice.end())
      for (const Segment* g : it->second)
        if (overlaps(p, *g)) {
          hit = true;
          gt_hit[static_cast<std::size_t>(g - gt.data())] = 1;
        }
    pred_hit += hit;
  }
  return detection_pr(static_cast<int>(pred.size()), static_cast<int>(gt.size()), pred_hit,
                      static_cast<int>(std::count(gt_hit.begin(), gt_hit.end(), 1)));
}

// Same rule for lesions on one IR grid, overlap of at least one pixel.
inline DetectionPR lesion_pr(const std::vector<Lesion>& pred, const std::vector<Lesion>& gt, int rows, int cols) {
  Image<int> owner(rows, cols, -1);
  for (std::size_t k = 0; k < gt.size(); ++k)
    for (const Pixel& p : gt[k].pixels) owner(p.r, p.c) = static_cast<int>(k);
  std::vector<char> gt_hit(gt.size(), 0);
  int pred_hit = 0;
  for (const Lesion& l : pred) {
    bool hit = false;
    for (const Pixel& p : l.pixels)
      if (const int k = owner(p.r, p.c); k >= 0) {
        hit = true;
        gt_hit[static_cast<std::size_t>(k)] = 1;
      }
    pred_hit += hit;
  }
  return detection_pr(static_cast<int>(pred.size()), static_cast<int>(gt.size()), pred_hit,
                      static_cast<int>(std::count(gt_hit.begin(), gt_hit.end(), 1)));
}

// ---------------------------------------------------------------- distances --

// Distance between two pixel centres in mm.
inline double pixel_distance(const Pixel& a, const Pixel& b, PixelSize px) {
  return std::hypot(double(a.r - b.r) * px.h_mm, double(a.c - b.c) * px.w_mm);
}

// Nearest-neighbour distances from every point of `from` to the set `to`.
// Rows of `to` are visited outwards from the query row until the row gap
// alone exceeds the best distance; within a row only the two columns around
// the query can be nearest.
inline std::vector<double> nearest_distances(const std::vector<Pixel>& from, const std::vector<Pixel>& to, PixelSize px) {
  if (to.empty()) throw Error("nearest distance to an empty set");
  std::map<int, std::vector<int>> rows;
  for (const Pixel& p : to) rows[p.r].push_back(p.c);
  for (auto& [r, cs] : rows) std::sort(cs.begin(), cs.end());
  std::vector<double> out;
  out.reserve(from.size());
  for (const Pixel& a : from) {
    double best = std::numeric_limits<double>::infinity();
    auto scan_row = [&](const std::pair<const int, std::vector<int>>& row) {
      const auto& cs = row.second;
      const auto it = std::lower_bound(cs.begin(), cs.end(), a.c);
      if (it != cs.end()) best = std::min(best, pixel_distance(a, {row.first, *it}, px));
      if (it != cs.begin()) best = std::min(best, pixel_distance(a, {row.first, *std::prev(it)}, px));
    };
    const auto mid = rows.lower_bound(a.r);
    for (auto it = mid; it != rows.end() && double(it->first - a.r) * px.h_mm <= best; ++it) scan_row(*it);
    for (auto it = mid; it != rows.begin();) {
      --it;
      if (double(a.r - it->first) * px.h_mm > best) break;
      scan_row(*it);
    }
    out.push_back(best);
  }
  return out;
}

struct SurfaceDistance {
  double assd_mm = 0.0;
  double shd_mm = 0.0;
};

// ASSD = mean of the two directed mean nearest distances; SHD = the larger
// directed maximum. Absent when either set is empty.
inline std::optional<SurfaceDistance> assd_shd(const std::vector<Pixel>& a, const std::vector<Pixel>& b, PixelSize px) {
  if (a.empty() || b.empty()) return std::nullopt;
  const auto dab = nearest_distances(a, b, px), dba = nearest_distances(b, a, px);
  double sab = 0, sba = 0, mab = 0, mba = 0;
  for (double d : dab) sab += d, mab = std::max(mab, d);
  for (double d : dba) sba += d, mba = std::max(mba, d);
  return SurfaceDistance{(sab / double(a.size()) + sba / double(b.size())) / 2, std::max(mab, mba)};
}

// Boundary pixels of a mask: set pixels with a 4-neighbour outside.
inline std::vector<Pixel> boundary_pixels(const Mask& m) {
  std::vector<Pixel> out;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      if (!m(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == m.rows() - 1 || c == m.cols() - 1 || !m(r - 1, c) || !m(r + 1, c) ||
                        !m(r, c - 1) || !m(r, c + 1);
      if (edge) out.push_back({r, c});
    }
  return out;
}

// ---------------------------------------------------------------- per pair --

// One row of the evaluation table for a study pair, predicted vs ground truth.
struct PairMetrics {
  std::string pair_id;
  std::string variant;
  long gt_columns = 0, pred_columns = 0;
  std::optional<double> burden_diff_pct;  // predicted minus GT burden, percentage points
  Confusion columns;
  std::optional<double> auc;
  std::optional<SurfaceDistance> surface;
  DetectionPR segments, lesions;
};

struct PairEvalInput {
  std::string pair_id;
  std::string variant;
  std::vector<double> scores;  // current-column scores
  std::vector<int> pred_bits;  // after thresholding
  std::vector<int> gt_bits;
  SegmentsMatrix pred_segments, gt_segments;
  Mask pred_mask, gt_mask;  // IR lesion masks inside the evaluated region
  std::vector<Lesion> pred_lesions, gt_lesions;
  double region_area_mm2 = 0.0;
  PixelSize px;
};

inline PairMetrics evaluate_pair(const PairEvalInput& in) {
  PairMetrics m;
  m.pair_id = in.pair_id;
  m.variant = in.variant;
  m.columns = confusion(in.pred_bits, in.gt_bits);
  m.gt_columns = m.columns.tp + m.columns.fn;
  m.pred_columns = m.columns.tp + m.columns.fp;
  if (!in.scores.empty()) m.auc = auc(in.scores, in.gt_bits);
  if (in.region_area_mm2 > 0) {
    const double pb = double(count_nonzero(in.pred_mask)) * in.px.area() / in.region_area_mm2;
    const double gb = double(count_nonzero(in.gt_mask)) * in.px.area() / in.region_area_mm2;
    m.burden_diff_pct = 100.0 * (pb - gb);
  }
  m.surface = assd_shd(boundary_pixels(in.pred_mask), boundary_pixels(in.gt_mask), in.px);
  m.segments = segment_pr(segments_of(in.pred_segments), segments_of(in.gt_segments));
  m.lesions = lesion_pr(in.pred_lesions, in.gt_lesions, in.gt_mask.rows(), in.gt_mask.cols());
  return m;
}

inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const DetectionPR& d) {
  return {{"precision", opt(d.precision)}, {"recall", opt(d.recall)}, {"n_pred", d.n_pred},
          {"n_gt", d.n_gt},                {"pred_hit", d.pred_hit},  {"gt_hit", d.gt_hit}};
}

inline nlohmann::json to_json(const PairMetrics& m) {
  return {{"pair_id", m.pair_id},
          {"variant", m.variant},
          {"gt_columns", m.gt_columns},
          {"pred_columns", m.pred_columns},
          {"burden_diff_pct", opt(m.burden_diff_pct)},
          {"confusion", {{"tp", m.columns.tp}, {"fp", m.columns.fp}, {"fn", m.columns.fn}, {"tn", m.columns.tn}}},
          {"f1", opt(m.columns.f1())},
          {"precision", opt(m.columns.precision())},
          {"recall", opt(m.columns.recall())},
          {"auc", opt(m.auc)},
          {"assd_mm", m.surface ? nlohmann::json(m.surface->assd_mm) : nlohmann::json()},
          {"shd_mm", m.surface ? nlohmann::json(m.surface->shd_mm) : nlohmann::json()},
          {"detection_rule", "overlap >= 1 column (segments) / 1 pixel (lesions)"},
          {"segments", to_json(m.segments)},
          {"lesions", to_json(m.lesions)}};
}

inline std::string metrics_csv_header() {
  return "pair_id,variant,gt_columns,pred_columns,burden_diff_pct,f1,auc,assd_mm,shd_mm,segment_precision,"
         "segment_recall,lesion_precision,lesion_recall";
}

inline std::string metrics_csv_row(const PairMetrics& m) {
  auto f = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char b[64];
    std::snprintf(b, sizeof b, "%.17g", *v);
    return std::string(b);
  };
  std::ostringstream o;
  o << m.pair_id << ',' << m.variant << ',' << m.gt_columns << ',' << m.pred_columns << ',' << f(m.burden_diff_pct)
    << ',' << f(m.columns.f1()) << ',' << f(m.auc) << ',' << f(m.surface ? std::optional(m.surface->assd_mm) : std::nullopt)
    << ',' << f(m.surface ? std::optional(m.surface->shd_mm) : std::nullopt) << ',' << f(m.segments.precision) << ','
    << f(m.segments.recall) << ',' << f(m.lesions.precision) << ',' << f(m.lesions.recall);
  return o.str();
}

}  // namespace octchange::eval
