#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "octchange/columns/augment.hpp"
#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"
#include "octchange/core/hash.hpp"
#include "octchange/nnet/loss.hpp"
#include "octchange/nnet/networks.hpp"

namespace octchange::nn {

struct TrainConfig {
  double lr = 1e-3;
  int batch = 100;
  int epochs = 1000;
  int patience = 50;
  int folds = 4;
  std::uint64_t seed = 1;
  std::vector<Variant> variants = all_variants();
  std::function<void(const std::string&)> log;

  void validate() const {
    if (!(lr > 0)) throw Error("train: lr must be positive");
    if (folds < 2) throw Error("train: at least two folds required");
    if (batch < 1 || epochs < 1 || patience < 1) throw Error("train: batch, epochs and patience must be positive");
  }
};

// ---------------------------------------------------------------- metrics --

struct BinaryCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision() const { return tp + fp ? double(tp) / double(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? double(tp) / double(tp + fn) : 0.0; }
  double f1() const { return 2 * tp + fp + fn ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0; }
};

inline BinaryCounts count_at(std::span<const double> scores, std::span<const int> labels, double th) {
  BinaryCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool p = scores[i] >= th;
    if (p && labels[i]) ++c.tp;
    else if (p) ++c.fp;
    else if (labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Threshold maximizing column F1. Candidates are midpoints between adjacent
// distinct scores plus one below and one above the range; ties go to the
// lower threshold (higher recall).
inline double select_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("select_threshold: length mismatch");
  const long pos = std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; });
  if (pos == 0 || pos == static_cast<long>(labels.size())) {
    warn("threshold selection: validation set has a single class; using 0.5");
    return 0.5;
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // Sweep from the highest threshold down; all samples with score ≥ th are positive.
  long tp = 0, fp = 0;
  double best_f1 = 0.0;  // th above every score
  double best_th = std::nextafter(scores[idx.front()], std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < idx.size();) {
    const double s = scores[idx[k]];
    while (k < idx.size() && scores[idx[k]] == s) {
      (labels[idx[k]] ? tp : fp) += 1;
      ++k;
    }
    const double th = k < idx.size() ? 0.5 * (s + scores[idx[k]]) : s;
    const double f1 = 2.0 * double(tp) / double(2 * tp + fp + (pos - tp));
    if (f1 >= best_f1) {
      best_f1 = f1;
      best_th = th;
    }
  }
  return best_th;
}

// ---------------------------------------------------------- fold selection --

struct FoldChoice {
  int fold = 0;
  bool fallback = false;
};

// Folds deviating from the mean F1 by more than one (population) standard
// deviation are excluded; the remaining fold closest to the mean of the
// remaining F1s wins.
inline FoldChoice select_fold(std::span<const double> f1) {
  if (f1.empty()) throw Error("select_fold: no folds");
  const double n = static_cast<double>(f1.size());
  const double mean = std::accumulate(f1.begin(), f1.end(), 0.0) / n;
  double var = 0;
  for (double f : f1) var += (f - mean) * (f - mean);
  const double sd = std::sqrt(var / n);
  std::vector<int> kept;
  for (std::size_t i = 0; i < f1.size(); ++i)
    if (std::abs(f1[i] - mean) <= sd) kept.push_back(static_cast<int>(i));
  if (kept.empty()) {
    warn("fold selection: every fold excluded; using the best-F1 fold");
    return {static_cast<int>(std::max_element(f1.begin(), f1.end()) - f1.begin()), true};
  }
  double m2 = 0;
  for (int i : kept) m2 += f1[static_cast<std::size_t>(i)];
  m2 /= static_cast<double>(kept.size());
  int best = kept.front();
  for (int i : kept)
    if (std::abs(f1[static_cast<std::size_t>(i)] - m2) < std::abs(f1[static_cast<std::size_t>(best)] - m2)) best = i;
  return {best, false};
}

// -------------------------------------------------------------- inference --

struct ColumnPrediction {
  ScorePair scores;
  int prior_bit = 0;
  int current_bit = 0;
};

inline std::vector<ColumnPrediction> infer_columns(const Classifier& c, std::span<const ColumnPairSample> pairs) {
  std::vector<ColumnPrediction> out;
  out.reserve(pairs.size());
  for (const ColumnPairSample& s : pairs) {
    ColumnPrediction p;
    p.scores = c.scores(s);
    p.prior_bit = p.scores.prior >= c.th ? 1 : 0;
    p.current_bit = p.scores.current >= c.th ? 1 : 0;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- training --

namespace train_detail {

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL)); }

struct Snapshot {
  std::vector<std::vector<double>> w;
  static Snapshot take(const std::vector<Param*>& ps) {
    Snapshot s;
    for (const Param* p : ps) s.w.push_back(p->w.v);
    return s;
  }
  void restore(const std::vector<Param*>& ps) const {
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->w.v = w[i];
  }
};

struct FitResult {
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
};

// Mini-batch Adam with early stopping on the mean validation loss. The best
// epoch's weights are restored on return. `grad(indices, seed)` accumulates
// the gradient of one batch and returns its loss; `val()` returns the mean
// validation loss.
inline FitResult fit(const std::vector<Param*>& params, std::size_t n_train,
                     const std::function<double(std::span<const std::size_t>, std::uint64_t)>& grad,
                     const std::function<double()>& val, const TrainConfig& cfg, std::uint64_t seed,
                     const std::string& tag) {
  if (n_train == 0) throw Error(tag + ": empty training set");
  Adam adam(params, {cfg.lr});
  FitResult r;
  Snapshot best = Snapshot::take(params);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  int wait = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0;
    int nb = 0;
    for (std::size_t b = 0; b < n_train; b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t e = std::min(n_train, b + static_cast<std::size_t>(cfg.batch));
      adam.zero_grad();
      train_loss += grad(std::span<const std::size_t>(order.data() + b, e - b), mix(rng(), b));
      adam.step();
      ++nb;
    }
    const double vl = val();
    r.epochs_run = epoch;
    if (cfg.log)
      cfg.log(tag + " epoch " + std::to_string(epoch) + " train " + std::to_string(train_loss / nb) + " val " +
              std::to_string(vl));
    if (vl < r.best_val_loss) {
      r.best_val_loss = vl;
      r.best_epoch = epoch;
      best = Snapshot::take(params);
      wait = 0;
    } else if (++wait >= cfg.patience) {
      break;
    }
  }
  best.restore(params);
  return r;
}

// Mean soft-F1 loss over consecutive batches of a score/label list.
inline double batched_loss(std::span<const double> s, std::span<const int> y, int batch) {
  double sum = 0;
  int n = 0;
  for (std::size_t b = 0; b < s.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(s.size(), b + static_cast<std::size_t>(batch));
    sum += soft_f1_loss(s.subspan(b, e - b), y.subspan(b, e - b));
    ++n;
  }
  return n ? sum / n : 0.0;
}

// Seeded assignment of n items to k folds of near-equal size.
inline std::vector<int> fold_ids(std::size_t n, int k, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> id(n);
  for (std::size_t i = 0; i < n; ++i) id[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return id;
}

// Feature extractor + standalone head trained on single-patch labels.
struct SingleModel {
  FeatureExtractor fe;
  Head head{Variant::M1};

  std::vector<Param*> params() {
    auto p = fe.params();
    auto h = head.params();
    p.insert(p.end(), h.begin(), h.end());
    return p;
  }
  double score(const Tensor& x) const { return head.single(fe.forward(x)); }
};

// One stage-1/2 training run: inputs(i) yields the network input of sample i.
inline FitResult train_single(SingleModel& m, const std::function<Tensor(std::size_t)>& inputs,
                              const std::vector<int>& labels, const std::vector<std::size_t>& train_idx,
                              const std::vector<std::size_t>& val_idx, const TrainConfig& cfg, std::uint64_t seed,
                              const std::string& tag) {
  if (train_idx.empty() || val_idx.empty()) throw Error(tag + ": empty dataset");
  const auto params = m.params();
  auto grad = [&](std::span<const std::size_t> batch, std::uint64_t bseed) {
    std::mt19937_64 drop(bseed);
    const std::size_t n = batch.size();
    std::vector<FeatureExtractor::Cache> fc(n);
    std::vector<Tensor> h(n), f(n);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = train_idx[batch[k]];
      f[k] = m.fe.forward(inputs(i), &fc[k], &drop);
      s[k] = m.head.single(f[k], &h[k]);
      y[k] = labels[i];
    }
    const auto ds = soft_f1_grad(s, y);
    for (std::size_t k = 0; k < n; ++k) m.fe.backward(fc[k], m.head.single_backward(f[k], h[k], s[k], ds[k]));
    return soft_f1_loss(s, y);
  };
  auto val = [&] {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i : val_idx) {
      s.push_back(m.score(inputs(i)));
      y.push_back(labels[i]);
    }
    return batched_loss(s, y, cfg.batch);
  };
  return fit(params, train_idx.size(), grad, val, cfg, seed, tag);
}

}  // namespace train_detail

// SHA-256 over the raw parameter bytes of a feature extractor.
inline std::string weights_digest(const FeatureExtractor& fe) {
  std::string bytes;
  for (const Param* p : fe.params())
    bytes.append(reinterpret_cast<const char*>(p->w.v.data()), p->w.v.size() * sizeof(double));
  return sha256_hex(bytes);
}

struct FoldReport {
  int fold = 0;
  int stage1_epoch = 0, stage2_epoch = 0;
  std::string n1_digest, n2_digest;  // taken when stages 1 and 2 finish
  std::map<Variant, double> val_f1;
  std::map<Variant, int> head_epoch;
};

struct TrainedSet {
  std::map<Variant, Classifier> classifiers;
  std::vector<FoldReport> folds;
};

// Stage 1: N1 + standalone head on d1 (yields M1). Stage 2: N2 on d2 pairs,
// supervised by the current bit through a temporary head. Stage 3: N1/N2
// frozen; the heads of every requested N3 variant train on cached features.
// Repeated over k folds; the fold per variant follows select_fold and th is
// chosen on that fold's validation pairs.
inline TrainedSet train_staged(const std::vector<ColumnSample>& d1, const std::vector<ColumnPairSample>& d2,
                               const TrainConfig& cfg) {
  using namespace train_detail;
  cfg.validate();
  if (d1.empty()) throw Error("train: stage-1 dataset is empty");
  if (d2.empty()) throw Error("train: pair dataset is empty");
  const std::vector<int> shape = d1.front().patch.t.shape;
  if (shape.size() != 3 || shape[2] != 3) throw Error("train: patches must be (H, w, 3)");
  for (const auto& s : d1)
    if (s.patch.t.shape != shape) throw Error("train: mixed patch shapes in d1");
  for (const auto& s : d2)
    if (s.prior.t.shape != shape || s.current.t.shape != shape) throw Error("train: mixed patch shapes in d2");
  const int H = shape[0], W = shape[1];
  const bool want_m1 = std::find(cfg.variants.begin(), cfg.variants.end(), Variant::M1) != cfg.variants.end();

  const auto f1id = fold_ids(d1.size(), cfg.folds, mix(cfg.seed, 11));
  const auto f2id = fold_ids(d2.size(), cfg.folds, mix(cfg.seed, 12));
  std::vector<int> y1(d1.size()), yc(d2.size()), yp(d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) y1[i] = d1[i].label;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    yc[i] = d2[i].current_bit;
    yp[i] = d2[i].prior_bit;
  }

  struct FoldModels {
    std::map<Variant, Classifier> cls;
    std::vector<std::size_t> val2;
  };
  std::vector<FoldModels> per_fold;
  TrainedSet out;

  for (int k = 0; k < cfg.folds; ++k) {
    const std::uint64_t fseed = mix(cfg.seed, 100 + static_cast<std::uint64_t>(k));
    std::vector<std::size_t> tr1, va1, tr2, va2;
    for (std::size_t i = 0; i < d1.size(); ++i) (f1id[i] == k ? va1 : tr1).push_back(i);
    for (std::size_t i = 0; i < d2.size(); ++i) (f2id[i] == k ? va2 : tr2).push_back(i);
    FoldReport rep;
    rep.fold = k;
    const std::string tag = "fold " + std::to_string(k);

    // Stage 1.
    std::mt19937_64 init(mix(fseed, 1));
    SingleModel s1{FeatureExtractor("n1", 3, H, W)};
    s1.fe.init(init);
    s1.head.init(init);
    rep.stage1_epoch =
        train_single(s1, [&](std::size_t i) { return d1[i].patch.t; }, y1, tr1, va1, cfg, mix(fseed, 2), tag + " stage1")
            .best_epoch;

    // Stage 2.
    SingleModel s2{FeatureExtractor("n2", 6, H, W)};
    s2.fe.init(init);
    s2.head.init(init);
    rep.stage2_epoch = train_single(
                           s2, [&](std::size_t i) { return concat_depth(d2[i].prior.t, d2[i].current.t); }, yc, tr2,
                           va2, cfg, mix(fseed, 3), tag + " stage2")
                           .best_epoch;

    rep.n1_digest = weights_digest(s1.fe);
    rep.n2_digest = weights_digest(s2.fe);
    auto n1 = std::make_shared<const FeatureExtractor>(s1.fe);
    auto n2 = std::make_shared<const FeatureExtractor>(s2.fe);

    // Stage 3 on cached (dropout-free) features of the frozen extractors.
    std::vector<BranchFeatures> feats(d2.size());
    for (std::size_t i = 0; i < d2.size(); ++i) {
      feats[i].prior = n1->forward(d2[i].prior.t);
      feats[i].current = n1->forward(d2[i].current.t);
      feats[i].pair = n2->forward(concat_depth(d2[i].prior.t, d2[i].current.t));
      feats[i].mask = d2[i].mask;
    }

    FoldModels fm;
    fm.val2 = va2;
    auto val_f1 = [&](const std::function<ScorePair(std::size_t)>& sc) {
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t i : va2) {
        s.push_back(sc(i).current);
        y.push_back(yc[i]);
      }
      return count_at(s, y, 0.5).f1();
    };
    if (want_m1) {
      Classifier c;
      c.variant = Variant::M1;
      c.n1 = n1;
      c.head = s1.head;
      c.provenance = {k, rep.stage1_epoch, 0.0};
      c.provenance.val_f1 = val_f1([&](std::size_t i) {
        return ScorePair{c.head.single(feats[i].prior), c.head.single(feats[i].current)};
      });
      rep.val_f1[Variant::M1] = c.provenance.val_f1;
      fm.cls[Variant::M1] = std::move(c);
    }
    for (Variant v : cfg.variants) {
      if (v == Variant::M1) continue;
      const VariantFlags fl = flags(v);
      Head head(v);
      std::mt19937_64 hinit(mix(fseed, 10 + static_cast<std::uint64_t>(v)));
      head.init(hinit);
      if (fl.n1) {
        head.prior_fc = s1.head.current_fc;
        head.current_fc = s1.head.current_fc;
        head.prior_fc.W.name = "head.prior_fc.W";
        head.prior_fc.b.name = "head.prior_fc.b";
        head.current_fc.W.name = "head.current_fc.W";
        head.current_fc.b.name = "head.current_fc.b";
      }
      if (fl.n2) {
        head.pair_fc = s2.head.current_fc;
        head.pair_fc.W.name = "head.pair_fc.W";
        head.pair_fc.b.name = "head.pair_fc.b";
      }
      auto grad = [&](std::span<const std::size_t> batch, std::uint64_t) {
        const std::size_t n = batch.size();
        std::vector<Head::Cache> hc(n);
        std::vector<double> sp(n), sc(n);
        std::vector<int> bp(n), bc(n);
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = tr2[batch[j]];
          const ScorePair s = head.forward(feats[i], &hc[j]);
          sp[j] = s.prior;
          sc[j] = s.current;
          bp[j] = yp[i];
          bc[j] = yc[i];
        }
        const auto gp = soft_f1_grad(sp, bp);
        const auto gc = soft_f1_grad(sc, bc);
        for (std::size_t j = 0; j < n; ++j) head.backward(hc[j], gp[j], gc[j]);
        return soft_f1_loss(sp, bp) + soft_f1_loss(sc, bc);
      };
      auto val = [&] {
        std::vector<double> sp, sc;
        std::vector<int> bp, bc;
        for (std::size_t i : va2) {
          const ScorePair s = head.forward(feats[i]);
          sp.push_back(s.prior);
          sc.push_back(s.current);
          bp.push_back(yp[i]);
          bc.push_back(yc[i]);
        }
        return batched_loss(sp, bp, cfg.batch) + batched_loss(sc, bc, cfg.batch);
      };
      const FitResult fr = fit(head.params(), tr2.size(), grad, val, cfg, mix(fseed, 20 + static_cast<std::uint64_t>(v)),
                               tag + " stage3 " + to_string(v));
      Classifier c;
      c.variant = v;
      if (fl.n1) c.n1 = n1;
      if (fl.n2) c.n2 = n2;
      c.head = head;
      c.provenance = {k, fr.best_epoch, val_f1([&](std::size_t i) { return c.head.forward(feats[i]); })};
      rep.val_f1[v] = c.provenance.val_f1;
      rep.head_epoch[v] = fr.best_epoch;
      fm.cls[v] = std::move(c);
    }
    out.folds.push_back(rep);
    per_fold.push_back(std::move(fm));
  }

  for (Variant v : cfg.variants) {
    std::vector<double> f1;
    for (const FoldReport& r : out.folds) f1.push_back(r.val_f1.at(v));
    const FoldChoice fc = select_fold(f1);
    Classifier c = per_fold[static_cast<std::size_t>(fc.fold)].cls.at(v);
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i : per_fold[static_cast<std::size_t>(fc.fold)].val2) {
      s.push_back(c.scores(d2[i]).current);
      y.push_back(yc[i]);
    }
    c.th = select_threshold(s, y);
    if (cfg.log)
      cfg.log(to_string(v) + ": fold " + std::to_string(fc.fold) + " val F1 " + std::to_string(c.provenance.val_f1) +
              " th " + std::to_string(c.th));
    out.classifiers[v] = std::move(c);
  }
  return out;
}

}  // namespace octchange::nn
