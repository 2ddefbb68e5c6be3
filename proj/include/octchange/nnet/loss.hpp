#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/nnet/layers.hpp"

namespace octchange::nn {

inline constexpr double kSoftF1Eps = 1e-7;

// 1 − 2·Σ(s·y) / (Σs + Σy + ε)
inline double soft_f1_loss(std::span<const double> s, std::span<const int> y) {
  if (s.empty()) throw Error("soft F1: empty batch");
  if (s.size() != y.size()) throw Error("soft F1: score/label length mismatch");
  double sy = 0, ss = 0, yy = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sy += s[i] * y[i];
    ss += s[i];
    yy += y[i];
  }
  return 1.0 - 2.0 * sy / (ss + yy + kSoftF1Eps);
}

inline std::vector<double> soft_f1_grad(std::span<const double> s, std::span<const int> y) {
  if (s.empty()) throw Error("soft F1: empty batch");
  double a = 0, b = kSoftF1Eps;
  for (std::size_t i = 0; i < s.size(); ++i) {
    a += s[i] * y[i];
    b += s[i] + y[i];
  }
  std::vector<double> g(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) g[i] = -2.0 * (y[i] * b - a) / (b * b);
  return g;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. Gradients are read
// from Param::g and cleared after each step.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0)) throw Error("adam: learning rate must be positive");
    for (Param* p : params_) {
      m_.emplace_back(p->w.shape);
      v_.emplace_back(p->w.shape);
    }
  }

  void zero_grad() {
    for (Param* p : params_) p->g.zero();
  }

  void step() {
    for (Param* p : params_)
      for (double g : p->g.v)
        if (!std::isfinite(g)) throw Error("adam: non-finite gradient in " + p->name + " at step " + std::to_string(t_ + 1));
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param& p = *params_[k];
      double* m = m_[k].data();
      double* v = v_[k].data();
      for (std::size_t i = 0; i < p.w.size(); ++i) {
        const double g = p.g.v[i];
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
        p.w.v[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
      p.g.zero();
    }
  }

  int steps() const { return t_; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

}  // namespace octchange::nn
