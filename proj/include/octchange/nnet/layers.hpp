#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/nnet/tensor.hpp"

namespace octchange::nn {

// A trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor w;
  Tensor g;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), w(shape), g(shape) {}
};

inline void he_uniform(Param& p, int fan_in, std::mt19937_64& rng) {
  const double lim = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> u(-lim, lim);
  for (double& x : p.w.v) x = u(rng);
}

// 2D convolution over (H, W, Cin) maps with "same" zero padding. For an even
// kernel extent the extra padding row/column goes after the data.
struct Conv2D {
  int kh = 1, kw = 1, cin = 1, cout = 1;
  Param W, b;

  Conv2D() = default;
  Conv2D(std::string name, int kh_, int kw_, int cin_, int cout_)
      : kh(kh_), kw(kw_), cin(cin_), cout(cout_), W(name + ".W", {kh_, kw_, cin_, cout_}), b(name + ".b", {cout_}) {}

  void init(std::mt19937_64& rng) { he_uniform(W, kh * kw * cin, rng); }
  int pad_top() const { return (kh - 1) / 2; }
  int pad_left() const { return (kw - 1) / 2; }

  Tensor forward(const Tensor& x) const {
    if (x.shape.size() != 3 || x.dim(2) != cin)
      throw Error("conv " + W.name + ": input shape " + shape_str(x.shape) + " mismatch");
    const int H = x.dim(0), Wd = x.dim(1);
    Tensor y({H, Wd, cout});
    const int pt = pad_top(), pl = pad_left();
    for (int oh = 0; oh < H; ++oh)
      for (int ow = 0; ow < Wd; ++ow) {
        double* yo = &y.v[(static_cast<std::size_t>(oh) * Wd + ow) * cout];
        for (int co = 0; co < cout; ++co) yo[co] = b.w.v[static_cast<std::size_t>(co)];
        for (int i = 0; i < kh; ++i) {
          const int ih = oh + i - pt;
          if (ih < 0 || ih >= H) continue;
          for (int j = 0; j < kw; ++j) {
            const int iw = ow + j - pl;
            if (iw < 0 || iw >= Wd) continue;
            const double* xi = &x.v[(static_cast<std::size_t>(ih) * Wd + iw) * cin];
            const double* wk = &W.w.v[(static_cast<std::size_t>(i) * kw + j) * cin * cout];
            for (int ci = 0; ci < cin; ++ci) {
              const double xv = xi[ci];
              const double* wr = wk + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) yo[co] += xv * wr[co];
            }
          }
        }
      }
    return y;
  }

  // Accumulates parameter gradients; returns dL/dx unless `need_dx` is false.
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true) {
    const int H = x.dim(0), Wd = x.dim(1);
    Tensor dx;
    if (need_dx) dx = Tensor(x.shape);
    const int pt = pad_top(), pl = pad_left();
    for (int oh = 0; oh < H; ++oh)
      for (int ow = 0; ow < Wd; ++ow) {
        const double* go = &dy.v[(static_cast<std::size_t>(oh) * Wd + ow) * cout];
        for (int co = 0; co < cout; ++co) b.g.v[static_cast<std::size_t>(co)] += go[co];
        for (int i = 0; i < kh; ++i) {
          const int ih = oh + i - pt;
          if (ih < 0 || ih >= H) continue;
          for (int j = 0; j < kw; ++j) {
            const int iw = ow + j - pl;
            if (iw < 0 || iw >= Wd) continue;
            const std::size_t xoff = (static_cast<std::size_t>(ih) * Wd + iw) * cin;
            const std::size_t woff = (static_cast<std::size_t>(i) * kw + j) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double xv = x.v[xoff + ci];
              double* gw = &W.g.v[woff + static_cast<std::size_t>(ci) * cout];
              for (int co = 0; co < cout; ++co) gw[co] += xv * go[co];
              if (need_dx) {
                const double* wr = &W.w.v[woff + static_cast<std::size_t>(ci) * cout];
                double s = 0.0;
                for (int co = 0; co < cout; ++co) s += wr[co] * go[co];
                dx.v[xoff + ci] += s;
              }
            }
          }
        }
      }
    return dx;
  }

  std::vector<Param*> params() { return {&W, &b}; }
};

// Non-overlapping max pooling with floor division of the spatial extents.
struct MaxPool2D {
  int ph = 1, pw = 1;

  Tensor forward(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr) const {
    const int H = x.dim(0), Wd = x.dim(1), C = x.dim(2);
    const int oh = H / ph, ow = Wd / pw;
    Tensor y({oh, ow, C});
    if (argmax) argmax->assign(y.size(), 0);
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c)
        for (int k = 0; k < C; ++k) {
          double best = -1e300;
          std::uint32_t bi = 0;
          for (int i = 0; i < ph; ++i)
            for (int j = 0; j < pw; ++j) {
              const std::size_t idx = (static_cast<std::size_t>(r * ph + i) * Wd + (c * pw + j)) * C + k;
              if (x.v[idx] > best) {
                best = x.v[idx];
                bi = static_cast<std::uint32_t>(idx);
              }
            }
          const std::size_t o = (static_cast<std::size_t>(r) * ow + c) * C + k;
          y.v[o] = best;
          if (argmax) (*argmax)[o] = bi;
        }
    return y;
  }

  Tensor backward(const std::vector<int>& x_shape, const std::vector<std::uint32_t>& argmax, const Tensor& dy) const {
    Tensor dx(x_shape);
    for (std::size_t o = 0; o < dy.size(); ++o) dx.v[argmax[o]] += dy.v[o];
    return dx;
  }
};

// y = x·W + b over a flattened input.
struct Dense {
  int nin = 1, nout = 1;
  Param W, b;

  Dense() = default;
  Dense(std::string name, int nin_, int nout_)
      : nin(nin_), nout(nout_), W(name + ".W", {nin_, nout_}), b(name + ".b", {nout_}) {}

  void init(std::mt19937_64& rng) { he_uniform(W, nin, rng); }

  Tensor forward(const Tensor& x) const {
    if (static_cast<int>(x.size()) != nin)
      throw Error("dense " + W.name + ": input size " + std::to_string(x.size()) + " != " + std::to_string(nin));
    Tensor y({nout});
    for (int o = 0; o < nout; ++o) y.v[static_cast<std::size_t>(o)] = b.w.v[static_cast<std::size_t>(o)];
    for (int i = 0; i < nin; ++i) {
      const double xv = x.v[static_cast<std::size_t>(i)];
      if (xv == 0.0) continue;
      const double* wr = &W.w.v[static_cast<std::size_t>(i) * nout];
      for (int o = 0; o < nout; ++o) y.v[static_cast<std::size_t>(o)] += xv * wr[o];
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true) {
    for (int o = 0; o < nout; ++o) b.g.v[static_cast<std::size_t>(o)] += dy.v[static_cast<std::size_t>(o)];
    Tensor dx;
    if (need_dx) dx = Tensor(x.shape);
    for (int i = 0; i < nin; ++i) {
      const double xv = x.v[static_cast<std::size_t>(i)];
      double* gw = &W.g.v[static_cast<std::size_t>(i) * nout];
      if (xv != 0.0)
        for (int o = 0; o < nout; ++o) gw[o] += xv * dy.v[static_cast<std::size_t>(o)];
      if (need_dx) {
        const double* wr = &W.w.v[static_cast<std::size_t>(i) * nout];
        double s = 0.0;
        for (int o = 0; o < nout; ++o) s += wr[o] * dy.v[static_cast<std::size_t>(o)];
        dx.v[static_cast<std::size_t>(i)] = s;
      }
    }
    return dx;
  }

  std::vector<Param*> params() { return {&W, &b}; }
};

inline Tensor relu(Tensor x) {
  for (double& v : x.v) v = v > 0.0 ? v : 0.0;
  return x;
}

// dL/dx given the ReLU output y and dL/dy.
inline Tensor relu_backward(const Tensor& y, Tensor dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.v[i] > 0.0)) dy.v[i] = 0.0;
  return dy;
}

// Inverted dropout: the mask holds 0 or 1/(1 − rate).
inline Tensor dropout_mask(const std::vector<int>& shape, double rate, std::mt19937_64& rng) {
  Tensor m(shape);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : m.v) v = keep(rng) ? scale : 0.0;
  return m;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

// Two-way softmax; the positive-class probability is σ(z1 − z0).
inline double softmax_positive(const Tensor& z) {
  const double d = z.v[1] - z.v[0];
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

// dL/dz for the two logits given dL/ds.
inline Tensor softmax_positive_backward(double s, double ds) {
  Tensor dz({2});
  const double k = s * (1.0 - s) * ds;
  dz.v[0] = -k;
  dz.v[1] = k;
  return dz;
}

inline Tensor concat(const std::vector<const Tensor*>& parts) {
  std::size_t n = 0;
  for (const Tensor* p : parts) n += p->size();
  Tensor out({static_cast<int>(n)});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->v.begin(), p->v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->size();
  }
  return out;
}

// Depth concatenation of two (H, W, C) maps.
inline Tensor concat_depth(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) throw Error("mismatched patch shapes");
  const int H = a.dim(0), W = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor out({H, W, ca + cb});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      for (int k = 0; k < ca; ++k) out.at3(r, c, k) = a.at3(r, c, k);
      for (int k = 0; k < cb; ++k) out.at3(r, c, ca + k) = b.at3(r, c, k);
    }
  return out;
}

}  // namespace octchange::nn
