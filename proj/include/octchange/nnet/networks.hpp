#pragma once

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"
#include "octchange/nnet/layers.hpp"
#include "octchange/nnet/tensor.hpp"

namespace octchange::nn {

enum class Variant { M1, M3_M2, M3_M2_P, M3_M1, M3_M1_P, M3, M3_P };

struct VariantFlags {
  bool n1 = true;    // prior and current single-column branches
  bool n2 = true;    // pair branch
  bool mask = false; // prior-mask branch
  bool standalone = false;
};

inline VariantFlags flags(Variant v) {
  switch (v) {
    case Variant::M1: return {true, false, false, true};
    case Variant::M3_M2: return {true, false, false, false};
    case Variant::M3_M2_P: return {true, false, true, false};
    case Variant::M3_M1: return {false, true, false, false};
    case Variant::M3_M1_P: return {false, true, true, false};
    case Variant::M3: return {true, true, false, false};
    case Variant::M3_P: return {true, true, true, false};
  }
  throw Error("unknown variant");
}

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::M1,    Variant::M3_M2,   Variant::M3_M2_P, Variant::M3_M1,
                                      Variant::M3_M1_P, Variant::M3, Variant::M3_P};
  return v;
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::M1: return "M1";
    case Variant::M3_M2: return "M3_M2";
    case Variant::M3_M2_P: return "M3_M2_P";
    case Variant::M3_M1: return "M3_M1";
    case Variant::M3_M1_P: return "M3_M1_P";
    case Variant::M3: return "M3";
    case Variant::M3_P: return "M3_P";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw Error("unknown model variant '" + s + "'");
}

// Prior-mask variant used for cascade steps after the first.
inline Variant with_prior_mask(Variant v) {
  switch (v) {
    case Variant::M3_M2: return Variant::M3_M2_P;
    case Variant::M3_M1: return Variant::M3_M1_P;
    case Variant::M3: return Variant::M3_P;
    default: return v;
  }
}

inline constexpr int kFeatureSize = 256;
inline constexpr int kBranchSize = 32;
inline constexpr int kMaskHidden = 32;
inline constexpr int kMaskSize = 8;
inline constexpr double kDropout = 0.4;

// Column feature extractor: conv 3×2 → pool 3×2 → conv 3×1 → pool 3×1 → FC.
// N1 takes a single (H, w, 3) patch, N2 the depth-concatenated (H, w, 6) pair.
struct FeatureExtractor {
  int height = 496, width = 7, cin = 3;
  Conv2D conv1, conv2;
  MaxPool2D pool1{3, 2}, pool2{3, 1};
  Dense fc;

  struct Cache {
    Tensor x, a1, p1, a2, p2, f, drop;
    std::vector<std::uint32_t> i1, i2;
  };

  FeatureExtractor() = default;
  FeatureExtractor(const std::string& name, int cin_, int height_, int width_ = 7)
      : height(height_), width(width_), cin(cin_),
        conv1(name + ".conv1", 3, 2, cin_, 32), conv2(name + ".conv2", 3, 1, 32, 64) {
    const int h2 = height_ / 3 / 3, w2 = width_ / 2;
    if (h2 < 1 || w2 < 1) throw Error("patch " + std::to_string(height_) + "x" + std::to_string(width_) + " too small");
    fc = Dense(name + ".fc", h2 * w2 * 64, kFeatureSize);
  }

  void init(std::mt19937_64& rng) {
    conv1.init(rng);
    conv2.init(rng);
    fc.init(rng);
  }

  std::vector<int> input_shape() const { return {height, width, cin}; }

  // With `cache` set, intermediates are kept for backward(); with `drop_rng`
  // set, dropout is applied to the feature vector.
  Tensor forward(const Tensor& x, Cache* cache = nullptr, std::mt19937_64* drop_rng = nullptr) const {
    if (x.shape != input_shape())
      throw Error("feature extractor: expected input " + shape_str(input_shape()) + ", got " + shape_str(x.shape));
    Tensor a1 = relu(conv1.forward(x));
    std::vector<std::uint32_t> i1, i2;
    Tensor p1 = pool1.forward(a1, cache ? &i1 : nullptr);
    Tensor a2 = relu(conv2.forward(p1));
    Tensor p2 = pool2.forward(a2, cache ? &i2 : nullptr);
    Tensor f = relu(fc.forward(p2));
    Tensor out = f;
    Tensor drop;
    if (drop_rng) {
      drop = dropout_mask(f.shape, kDropout, *drop_rng);
      out = mul(f, drop);
    }
    if (cache) *cache = {x, std::move(a1), std::move(p1), std::move(a2), std::move(p2), std::move(f), std::move(drop),
                         std::move(i1), std::move(i2)};
    return out;
  }

  void backward(const Cache& c, Tensor dout) {
    if (!c.drop.v.empty()) dout = mul(dout, c.drop);
    Tensor d = relu_backward(c.f, std::move(dout));
    d = fc.backward(c.p2, d);
    d.shape = c.p2.shape;
    d = relu_backward(c.a2, pool2.backward(c.a2.shape, c.i2, d));
    d = conv2.backward(c.p1, d);
    d = relu_backward(c.a1, pool1.backward(c.a1.shape, c.i1, d));
    conv1.backward(c.x, d, false);
  }

  std::vector<Param*> params() { return {&conv1.W, &conv1.b, &conv2.W, &conv2.b, &fc.W, &fc.b}; }
  std::vector<const Param*> params() const { return {&conv1.W, &conv1.b, &conv2.W, &conv2.b, &fc.W, &fc.b}; }
};

// Feature vectors entering the fully connected head; unused branches stay empty.
struct BranchFeatures {
  Tensor prior, current, pair;
  MaskFeature mask{};
};

struct ScorePair {
  double prior = 0.5;
  double current = 0.5;
};

// Everything after the feature extractors: per-branch FC 256→32, the mask
// chain 9→32→8 and the two softmax heads. For M1 a single branch FC and
// head score the prior and current columns independently.
struct Head {
  Variant variant = Variant::M3;
  Dense prior_fc, current_fc, pair_fc, mask_fc1, mask_fc2, prior_out, current_out;

  struct Cache {
    Tensor fp, fc, fq, hp, hc, hq, m0, m1, m2, zin;
    double sp = 0.5, sc = 0.5;
  };

  Head() = default;
  explicit Head(Variant v) : variant(v) {
    const VariantFlags f = flags(v);
    if (f.standalone) {
      current_fc = Dense("head.branch_fc", kFeatureSize, kBranchSize);
      current_out = Dense("head.out", kBranchSize, 2);
      return;
    }
    int k = 0;
    if (f.n1) {
      prior_fc = Dense("head.prior_fc", kFeatureSize, kBranchSize);
      current_fc = Dense("head.current_fc", kFeatureSize, kBranchSize);
      k += 2 * kBranchSize;
    }
    if (f.n2) {
      pair_fc = Dense("head.pair_fc", kFeatureSize, kBranchSize);
      k += kBranchSize;
    }
    if (f.mask) {
      mask_fc1 = Dense("head.mask_fc1", 9, kMaskHidden);
      mask_fc2 = Dense("head.mask_fc2", kMaskHidden, kMaskSize);
      k += kMaskSize;
    }
    prior_out = Dense("head.prior_out", kBranchSize, 2);
    current_out = Dense("head.current_out", k, 2);
  }

  VariantFlags flags_() const { return flags(variant); }

  std::vector<Dense*> layers() {
    const VariantFlags f = flags_();
    if (f.standalone) return {&current_fc, &current_out};
    std::vector<Dense*> out;
    if (f.n1) out.insert(out.end(), {&prior_fc, &current_fc});
    if (f.n2) out.push_back(&pair_fc);
    if (f.mask) out.insert(out.end(), {&mask_fc1, &mask_fc2});
    out.insert(out.end(), {&prior_out, &current_out});
    return out;
  }
  std::vector<const Dense*> layers() const {
    std::vector<const Dense*> out;
    for (Dense* d : const_cast<Head*>(this)->layers()) out.push_back(d);
    return out;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (Dense* d : layers()) out.insert(out.end(), {&d->W, &d->b});
    return out;
  }

  std::vector<const Param*> params() const {
    std::vector<const Param*> out;
    for (const Dense* d : layers()) out.insert(out.end(), {&d->W, &d->b});
    return out;
  }

  void init(std::mt19937_64& rng) {
    for (Dense* d : layers()) d->init(rng);
  }

  // Standalone (M1-style) score of one feature vector.
  double single(const Tensor& f, Tensor* h = nullptr) const {
    Tensor hh = relu(current_fc.forward(f));
    const double s = softmax_positive(current_out.forward(hh));
    if (h) *h = std::move(hh);
    return s;
  }

  // Gradient of a standalone score with respect to its feature vector.
  Tensor single_backward(const Tensor& f, const Tensor& h, double s, double ds) {
    Tensor d = current_out.backward(h, softmax_positive_backward(s, ds));
    return current_fc.backward(f, relu_backward(h, std::move(d)));
  }

  ScorePair forward(const BranchFeatures& in, Cache* cache = nullptr) const {
    const VariantFlags f = flags_();
    Cache c;
    if (f.standalone) {
      if (in.prior.size()) c.sp = single(in.prior, &c.hp);
      c.sc = single(in.current, &c.hc);
    } else {
      std::vector<const Tensor*> parts;
      if (f.n1) {
        c.hp = relu(prior_fc.forward(in.prior));
        c.hc = relu(current_fc.forward(in.current));
        parts.insert(parts.end(), {&c.hp, &c.hc});
      }
      if (f.n2) {
        c.hq = relu(pair_fc.forward(in.pair));
        parts.push_back(&c.hq);
      }
      if (f.mask) {
        c.m0 = Tensor({9});
        std::copy(in.mask.begin(), in.mask.end(), c.m0.v.begin());
        c.m1 = relu(mask_fc1.forward(c.m0));
        c.m2 = relu(mask_fc2.forward(c.m1));
        parts.push_back(&c.m2);
      }
      c.zin = concat(parts);
      // Without the single-column branches the prior head reads the pair
      // branch; its gradient stops there (see backward).
      c.sp = softmax_positive(prior_out.forward(f.n1 ? c.hp : c.hq));
      c.sc = softmax_positive(current_out.forward(c.zin));
    }
    const ScorePair out{c.sp, c.sc};
    if (cache) {
      c.fp = in.prior;
      c.fc = in.current;
      c.fq = in.pair;
      *cache = std::move(c);
    }
    return out;
  }

  // Accumulates parameter gradients; returns dL/d(features).
  BranchFeatures backward(const Cache& c, double dsp, double dsc) {
    const VariantFlags f = flags_();
    BranchFeatures g;
    if (f.standalone) {
      if (c.fp.size()) g.prior = single_backward(c.fp, c.hp, c.sp, dsp);
      g.current = single_backward(c.fc, c.hc, c.sc, dsc);
      return g;
    }
    const Tensor dz = current_out.backward(c.zin, softmax_positive_backward(c.sc, dsc));
    const Tensor& hprior = f.n1 ? c.hp : c.hq;
    Tensor dh_prior = prior_out.backward(hprior, softmax_positive_backward(c.sp, dsp));
    std::size_t off = 0;
    auto slice = [&](int n) {
      Tensor t({n});
      std::copy(dz.v.begin() + static_cast<std::ptrdiff_t>(off), dz.v.begin() + static_cast<std::ptrdiff_t>(off + n),
                t.v.begin());
      off += static_cast<std::size_t>(n);
      return t;
    };
    if (f.n1) {
      Tensor dhp = slice(kBranchSize);
      for (std::size_t i = 0; i < dhp.size(); ++i) dhp.v[i] += dh_prior.v[i];
      Tensor dhc = slice(kBranchSize);
      g.prior = prior_fc.backward(c.fp, relu_backward(c.hp, std::move(dhp)));
      g.current = current_fc.backward(c.fc, relu_backward(c.hc, std::move(dhc)));
    }
    if (f.n2) {
      // The prior loss trains prior_out only; routed into pair_fc it drives
      // the shared branch to a dead state.
      Tensor dhq = slice(kBranchSize);
      g.pair = pair_fc.backward(c.fq, relu_backward(c.hq, std::move(dhq)));
    }
    if (f.mask) {
      Tensor dm2 = slice(kMaskSize);
      Tensor dm1 = mask_fc2.backward(c.m1, relu_backward(c.m2, std::move(dm2)));
      mask_fc1.backward(c.m0, relu_backward(c.m1, std::move(dm1)), false);
    }
    return g;
  }
};

struct Provenance {
  int fold = -1;
  int epoch = 0;
  double val_f1 = 0.0;
};

// A trained variant: shared (frozen) feature extractors, its head, and th.
struct Classifier {
  Variant variant = Variant::M3;
  std::shared_ptr<const FeatureExtractor> n1, n2;
  Head head;
  double th = 0.5;
  Provenance provenance;

  int patch_height() const { return n1 ? n1->height : n2 ? n2->height : 0; }

  void check() const {
    const VariantFlags f = flags(variant);
    if (f.n1 && !n1) throw Error("variant " + to_string(variant) + " is missing N1 weights");
    if (f.n2 && !n2) throw Error("variant " + to_string(variant) + " is missing N2 weights");
    if (head.variant != variant) throw Error("head does not match variant " + to_string(variant));
  }

  BranchFeatures features(const ColumnPairSample& s) const {
    const VariantFlags f = flags(variant);
    check();
    if (s.prior.t.shape != s.current.t.shape) throw Error("mismatched patch shapes");
    BranchFeatures out;
    if (f.n1) {
      out.prior = n1->forward(s.prior.t);
      out.current = n1->forward(s.current.t);
    }
    if (f.n2) out.pair = n2->forward(concat_depth(s.prior.t, s.current.t));
    out.mask = s.mask;
    return out;
  }

  ScorePair scores(const ColumnPairSample& s) const { return head.forward(features(s)); }
};

struct N1Output {
  Tensor features;
  double score = 0.5;
};

// Standalone N1: feature extractor plus its branch FC and softmax head.
inline N1Output forward_n1(const Tensor& patch, const FeatureExtractor& fe, const Head& head) {
  if (!flags(head.variant).standalone) throw Error("forward_n1 needs a standalone head");
  N1Output o;
  o.features = fe.forward(patch);
  o.score = head.single(o.features);
  return o;
}

inline Tensor forward_n2(const Tensor& prior, const Tensor& current, const FeatureExtractor& fe) {
  if (prior.shape != current.shape) throw Error("mismatched patch shapes");
  return fe.forward(concat_depth(prior, current));
}

inline ScorePair forward_n3(const ColumnPairSample& s, const Classifier& c) { return c.scores(s); }

}  // namespace octchange::nn
