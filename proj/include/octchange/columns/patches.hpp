#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/filters.hpp"
#include "octchange/lesions/segments.hpp"
#include "octchange/nnet/tensor.hpp"
#include "octchange/registration/column_map.hpp"
#include "octchange/registration/register.hpp"
#include "octchange/studyio/study.hpp"

namespace octchange {

struct PatchConfig {
  int w = 7;  // patch width, odd
  int s = 1;  // stride between patch centres

  void validate() const {
    if (w < 1 || w % 2 == 0) throw Error("patch width must be odd and positive");
    if (s < 1) throw Error("patch stride must be positive");
    if (!(s < w || s == 1)) throw Error("patch stride must be smaller than the patch width");
  }
};

inline ImageD denoise_slice(const ImageD& slice) { return filters::box_filter(slice, 2); }

// A study whose slices went through denoise_slice exactly once. Only
// denoise() constructs one, so patches can never be cut from raw slices.
class DenoisedStudy {
 public:
  const std::string& id() const { return id_; }
  const StudyMeta& meta() const { return meta_; }
  const ImageD& slice(int k) const { return slices_.at(static_cast<std::size_t>(k)); }
  int n_slices() const { return static_cast<int>(slices_.size()); }

 private:
  friend DenoisedStudy denoise(const Study& s);
  std::string id_;
  StudyMeta meta_;
  std::vector<ImageD> slices_;
};

inline DenoisedStudy denoise(const Study& s) {
  DenoisedStudy d;
  d.id_ = s.id;
  d.meta_ = s.meta;
  d.slices_.reserve(s.slices.size());
  for (const ImageD& sl : s.slices) d.slices_.push_back(denoise_slice(sl));
  return d;
}

// h_OCT × w × 3 tensor: previous, current and next slice around a column.
struct ColumnPatch {
  nn::Tensor t;
  int slice = 0;
  int column = 0;
  std::string study_id;
};

// Depth planes for slice x; the missing neighbour at either end of the stack
// is replaced by the one neighbour that exists.
inline std::array<int, 3> depth_planes(int x, int n) {
  if (n == 1) return {0, 0, 0};
  const int prev = x == 0 ? 1 : x - 1;
  const int next = x == n - 1 ? n - 2 : x + 1;
  return {prev, x, next};
}

inline ColumnPatch make_patch(const DenoisedStudy& d, int slice, int center, int w) {
  const int h = d.meta().oct_height, half = w / 2;
  if (center - half < 0 || center + half >= d.meta().oct_width) throw Error("patch does not fit the slice");
  ColumnPatch p{nn::Tensor({h, w, 3}), slice, center, d.id()};
  const auto planes = depth_planes(slice, d.n_slices());
  for (int k = 0; k < 3; ++k) {
    const ImageD& img = d.slice(planes[static_cast<std::size_t>(k)]);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) p.t.at3(r, c, k) = img(r, center - half + c);
  }
  return p;
}

// Centres of the patches that fit a slice: s·i + ⌊w/2⌋.
inline std::vector<int> patch_centers(int oct_width, const PatchConfig& cfg) {
  cfg.validate();
  if (cfg.w > oct_width) throw Error("patch wider than slice");
  std::vector<int> out;
  const int m = oct_width / cfg.s;
  for (int i = 0; i < m; ++i) {
    const int c = cfg.s * i + cfg.w / 2;
    if (c + cfg.w / 2 >= oct_width) break;
    out.push_back(c);
  }
  return out;
}

inline std::vector<ColumnPatch> extract_patches(const DenoisedStudy& d, const PatchConfig& cfg) {
  const auto centers = patch_centers(d.meta().oct_width, cfg);
  std::vector<ColumnPatch> out;
  out.reserve(centers.size() * static_cast<std::size_t>(d.n_slices()));
  for (int x = 0; x < d.n_slices(); ++x)
    for (int c : centers) out.push_back(make_patch(d, x, c, cfg.w));
  return out;
}

using MaskFeature = std::array<double, 9>;

// 3×3 neighbourhood of (slice, column) in a segments matrix, row-major over
// (slice − 1 .. slice + 1) × (column − 1 .. column + 1); zeros off the grid.
inline MaskFeature mask_feature(const SegmentsMatrix* m, int slice, int column) {
  MaskFeature f{};
  if (!m) return f;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy) {
      const int x = slice + dx, y = column + dy;
      if (x < 0 || y < 0 || x >= m->n_slices() || y >= m->width()) continue;
      f[static_cast<std::size_t>((dx + 1) * 3 + dy + 1)] = m->at(x, y) ? 1.0 : 0.0;
    }
  return f;
}

struct ColumnPairSample {
  ColumnPatch prior;
  ColumnPatch current;
  MaskFeature mask{};
  int prior_bit = 0;
  int current_bit = 0;
  ColumnMatch match;

  bool positive() const { return prior_bit || current_bit; }
};

struct ColumnSample {
  ColumnPatch patch;
  int label = 0;

  bool positive() const { return label != 0; }
};

struct PairLabels {
  const SegmentsMatrix* prior = nullptr;
  const SegmentsMatrix* current = nullptr;
};

// Visits every prior patch centre whose matched current column carries a
// full patch; out-of-FOV matches are skipped.
template <typename Fn>
void for_each_pair(const DenoisedStudy& prior, const DenoisedStudy& current, const RegistrationResult& reg,
                   const PatchConfig& cfg, Fn&& fn) {
  if (reg.status == RegStatus::needs_manual) throw Error("registration needs manual landmarks");
  const ColumnMatcher cm = match_columns(prior.meta(), current.meta(), reg.transform);
  const auto centers = patch_centers(prior.meta().oct_width, cfg);
  const int half = cfg.w / 2;
  for (int x = 0; x < prior.n_slices(); ++x)
    for (int y : centers) {
      const auto m = cm.match({x, y});
      if (!m) continue;
      if (m->current.column - half < 0 || m->current.column + half >= current.meta().oct_width) continue;
      fn(x, y, *m);
    }
}

inline ColumnPairSample make_pair_sample(const DenoisedStudy& prior, const DenoisedStudy& current,
                                         const ColumnMatch& m, int w, const SegmentsMatrix* prior_mask,
                                         const PairLabels& labels) {
  ColumnPairSample s;
  s.prior = make_patch(prior, m.prior.slice, m.prior.column, w);
  s.current = make_patch(current, m.current.slice, m.current.column, w);
  s.mask = mask_feature(prior_mask, m.prior.slice, m.prior.column);
  if (labels.prior) s.prior_bit = labels.prior->at(m.prior.slice, m.prior.column) ? 1 : 0;
  if (labels.current) s.current_bit = labels.current->at(m.current.slice, m.current.column) ? 1 : 0;
  s.match = m;
  return s;
}

inline std::vector<ColumnPairSample> pair_patches(const DenoisedStudy& prior, const DenoisedStudy& current,
                                                  const RegistrationResult& reg, const PatchConfig& cfg,
                                                  const SegmentsMatrix* prior_mask = nullptr,
                                                  const PairLabels& labels = {}) {
  if (current.n_slices() != current.meta().n_slices) throw Error("missing current slice data");
  std::vector<ColumnPairSample> out;
  for_each_pair(prior, current, reg, cfg, [&](int, int, const ColumnMatch& m) {
    out.push_back(make_pair_sample(prior, current, m, cfg.w, prior_mask, labels));
  });
  return out;
}

}  // namespace octchange
