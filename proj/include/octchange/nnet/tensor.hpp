#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"

namespace octchange::nn {

// Dense row-major tensor of doubles. Spatial feature maps are (H, W, C) with
// the channel index innermost.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    v.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw Error("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return s.empty() ? 0 : n;
  }

  std::size_t size() const { return v.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& at3(int h, int w, int c) { return v[(static_cast<std::size_t>(h) * shape[1] + w) * shape[2] + c]; }
  double at3(int h, int w, int c) const { return v[(static_cast<std::size_t>(h) * shape[1] + w) * shape[2] + c]; }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

}  // namespace octchange::nn
