#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/image.hpp"

namespace octchange {

// Binary n_slices × w_OCT matrix of atrophy columns for one scan.
struct SegmentsMatrix {
  std::string study_id;
  Mask bits;

  SegmentsMatrix() = default;
  SegmentsMatrix(int n_slices, int width, std::string id = {}) : study_id(std::move(id)), bits(n_slices, width, 0) {}

  int n_slices() const { return bits.rows(); }
  int width() const { return bits.cols(); }
  bool at(int slice, int col) const { return bits(slice, col) != 0; }
  void set(int slice, int col, bool v = true) { bits(slice, col) = v ? 1 : 0; }
  std::size_t count() const { return count_nonzero(bits); }

  friend bool operator==(const SegmentsMatrix& a, const SegmentsMatrix& b) { return a.bits == b.bits; }
};

// A maximal run of atrophy columns [left, right] (inclusive) within one slice.
struct Segment {
  int slice = 0;
  int left = 0;
  int right = 0;
  int length() const { return right - left + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentsResult {
  SegmentsMatrix matrix;
  std::vector<Segment> segments;
};

// Maximal runs of 1s per slice; runs shorter than `min_len` are dropped from
// both the returned matrix and the segment list.
inline SegmentsResult columns_to_segments(const Mask& bits, int min_len, std::string study_id = {}) {
  SegmentsResult out{SegmentsMatrix(bits.rows(), bits.cols(), std::move(study_id)), {}};
  for (int s = 0; s < bits.rows(); ++s) {
    int c = 0;
    while (c < bits.cols()) {
      if (!bits(s, c)) {
        ++c;
        continue;
      }
      int e = c;
      while (e + 1 < bits.cols() && bits(s, e + 1)) ++e;
      if (e - c + 1 >= min_len) {
        out.segments.push_back({s, c, e});
        for (int k = c; k <= e; ++k) out.matrix.set(s, k);
      }
      c = e + 1;
    }
  }
  return out;
}

inline std::vector<Segment> segments_of(const SegmentsMatrix& m) {
  return columns_to_segments(m.bits, 1, m.study_id).segments;
}

}  // namespace octchange
