#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "octchange/core/error.hpp"

namespace octchange {

// Row-major 2D raster. Rows run along the slice axis of the IR plane (x),
// columns along the OCT column axis (y); OCT slices use rows for depth (z).
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw Error("negative image dimensions");
    data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

  T& operator()(int r, int c) { return data_[index(r, c)]; }
  const T& operator()(int r, int c) const { return data_[index(r, c)]; }

  const T& at(int r, int c) const {
    if (!in_bounds(r, c)) throw Error("image index out of range");
    return data_[index(r, c)];
  }

  // Replicate-border access.
  const T& clamped(int r, int c) const {
    r = r < 0 ? 0 : (r >= rows_ ? rows_ - 1 : r);
    c = c < 0 ? 0 : (c >= cols_ ? cols_ - 1 : c);
    return data_[index(r, c)];
  }

  std::span<T> row(int r) { return {data_.data() + index(r, 0), static_cast<std::size_t>(cols_)}; }
  std::span<const T> row(int r) const {
    return {data_.data() + index(r, 0), static_cast<std::size_t>(cols_)};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Image& a, const Image& b) = default;

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(c);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using ImageD = Image<double>;
using Mask = Image<std::uint8_t>;
using LabelImage = Image<std::uint16_t>;

template <typename T>
std::size_t count_nonzero(const Image<T>& img) {
  std::size_t n = 0;
  for (const T& v : img.data()) n += (v != T{}) ? 1 : 0;
  return n;
}

inline double dice(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("dice: mask size mismatch");
  std::size_t inter = 0, sa = 0, sb = 0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const bool pa = da[i] != 0, pb = db[i] != 0;
    sa += pa;
    sb += pb;
    inter += (pa && pb);
  }
  if (sa + sb == 0) return 0.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

}  // namespace octchange
