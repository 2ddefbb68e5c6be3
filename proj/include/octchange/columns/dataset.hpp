#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "octchange/columns/augment.hpp"
#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"

namespace octchange {

struct SamplingConfig {
  std::size_t max_positives = 400;  // originals per pair, before augmentation
  double negative_ratio = 4.0;      // per original positive; matches its 4 augmented copies (1:1)
  double hard_fraction = 0.0;       // share of negatives drawn from the hard-negative mask
  AugmentConfig augment{4.0, 2.0, 2};
};

// Labeled training pairs from one registered study pair. Columns are chosen
// first and only the chosen ones are cut into patches; positives then get
// mirror and rotation copies.
inline std::vector<ColumnPairSample> training_pairs(const DenoisedStudy& prior, const DenoisedStudy& current,
                                                    const RegistrationResult& reg, const PatchConfig& pc,
                                                    const PairLabels& labels, const SegmentsMatrix* prior_mask,
                                                    const SamplingConfig& sc, std::uint64_t seed,
                                                    const SegmentsMatrix* hard_current = nullptr) {
  if (!labels.prior || !labels.current) throw Error("training pairs need prior and current labels");
  std::vector<ColumnMatch> pos, neg, hard;
  for_each_pair(prior, current, reg, pc, [&](int, int, const ColumnMatch& m) {
    const bool p = labels.prior->at(m.prior.slice, m.prior.column) || labels.current->at(m.current.slice, m.current.column);
    if (p) pos.push_back(m);
    else if (hard_current && hard_current->at(m.current.slice, m.current.column)) hard.push_back(m);
    else neg.push_back(m);
  });
  if (pos.empty()) throw Error("no positive samples");
  std::mt19937_64 rng(splitmix64(seed));
  auto take = [&](std::vector<ColumnMatch>& v, std::size_t n) {
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(std::min(n, v.size()));
  };
  take(pos, sc.max_positives);
  const auto n_neg = static_cast<std::size_t>(std::llround(sc.negative_ratio * static_cast<double>(pos.size())));
  take(hard, static_cast<std::size_t>(std::llround(sc.hard_fraction * static_cast<double>(n_neg))));
  take(neg, n_neg - hard.size());

  std::vector<ColumnPairSample> base;
  for (const auto* group : {&pos, &hard, &neg})
    for (const ColumnMatch& m : *group) base.push_back(make_pair_sample(prior, current, m, pc.w, prior_mask, labels));
  AugmentConfig ac = sc.augment;
  ac.negative_ratio = sc.negative_ratio;
  return balance_and_augment(base, ac, seed);
}

// Single-study samples taken from the current side of pair samples.
inline std::vector<ColumnSample> current_singles(const std::vector<ColumnPairSample>& pairs) {
  std::vector<ColumnSample> out;
  out.reserve(pairs.size());
  for (const ColumnPairSample& p : pairs) out.push_back({p.current, p.current_bit});
  return out;
}

}  // namespace octchange
