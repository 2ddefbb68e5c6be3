#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <type_traits>

#include "octchange/columns/augment.hpp"
#include "octchange/columns/patches.hpp"
#include "octchange/columns/shard.hpp"
#include "octchange/studyio/synth.hpp"

using namespace octchange;

namespace {

Study blank_study(int n, int h, int w, double fill = 0.0) {
  Study s;
  s.id = "blank";
  s.meta.n_slices = n;
  s.meta.oct_height = h;
  s.meta.oct_width = w;
  s.meta.oct_px_z_um = 3.9;
  s.meta.oct_px_y_um = 6.0;
  s.meta.ir_rows = s.meta.ir_cols = 128;
  s.meta.ir_px_h_um = s.meta.ir_px_w_um = 20.0;
  s.meta.fov_origin = {10, 10};
  s.meta.fov_extent = {n * 7.0, 100};
  s.meta.acquired_at = "2020-01-01";
  s.ir = ImageD(128, 128, 0.5);
  for (int k = 0; k < n; ++k) s.slices.emplace_back(h, w, fill);
  return s;
}

SynthConfig fast_cfg() {
  SynthConfig cfg;
  cfg.oct_height = 16;
  cfg.oct_width = 200;
  return cfg;
}

ColumnSample labeled(int label, double v) {
  ColumnSample s;
  s.patch.t = nn::Tensor({4, 3, 3}, v);
  s.label = label;
  return s;
}

}  // namespace

static_assert(!std::is_invocable_v<decltype(extract_patches), const Study&, const PatchConfig&>,
              "patches are cut only from denoised studies");

TEST(Denoise, ConstantUnchanged) {
  const ImageD img(20, 30, 0.37);
  const ImageD out = denoise_slice(img);
  for (double v : out.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Denoise, ImpulseResponse) {
  ImageD img(21, 21, 0.0);
  img(10, 10) = 1.0;
  const ImageD out = denoise_slice(img);
  for (int r = 0; r < 21; ++r)
    for (int c = 0; c < 21; ++c) {
      const bool inside = std::abs(r - 10) <= 2 && std::abs(c - 10) <= 2;
      EXPECT_NEAR(out(r, c), inside ? 1.0 / 25 : 0.0, 1e-15);
    }
}

TEST(Denoise, MatchesDirectSummation) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  ImageD img(60, 80);
  for (double& v : img.data()) v = u(rng);
  const ImageD out = denoise_slice(img);
  std::uniform_int_distribution<int> rr(2, 57), cc(2, 77);
  for (int i = 0; i < 100; ++i) {
    const int r = rr(rng), c = cc(rng);
    double s = 0;
    for (int dr = -2; dr <= 2; ++dr)
      for (int dc = -2; dc <= 2; ++dc) s += img(r + dr, c + dc);
    EXPECT_NEAR(out(r, c), s / 25.0, 1e-12);
  }
}

TEST(Denoise, AppliedExactlyOnce) {
  const SynthPair p = synth_pair(2, fast_cfg());
  const DenoisedStudy d = denoise(p.prior);
  EXPECT_EQ(d.slice(5), denoise_slice(p.prior.slices[5]));
  EXPECT_NE(d.slice(5), denoise_slice(denoise_slice(p.prior.slices[5])));
  const ColumnPatch patch = make_patch(d, 5, 50, 7);
  EXPECT_EQ(patch.t.at3(3, 3, 1), d.slice(5)(3, 50));
}

TEST(Patches, CountsPerSlice) {
  EXPECT_EQ(patch_centers(1024, {7, 1}).size(), 1018u);
  EXPECT_EQ(patch_centers(1024, {7, 1}).front(), 3);
  EXPECT_EQ(patch_centers(1024, {7, 1}).back(), 1020);
  EXPECT_EQ(patch_centers(1024, {7, 2}).size(), 509u);
  try {
    patch_centers(5, {7, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "patch wider than slice");
  }
  EXPECT_THROW(patch_centers(100, {6, 1}), Error);
  EXPECT_THROW(patch_centers(100, {7, 7}), Error);
}

TEST(Patches, ShapeAndDepthPlanes) {
  Study s = blank_study(4, 10, 30);
  for (int k = 0; k < 4; ++k) s.slices[k] = ImageD(10, 30, 0.1 * (k + 1));
  const DenoisedStudy d = denoise(s);
  const auto patches = extract_patches(d, {7, 1});
  ASSERT_EQ(patches.size(), 4u * 24u);
  EXPECT_EQ(patches[0].t.shape, (std::vector<int>{10, 7, 3}));
  // Slice 0: previous plane replicated from slice 1.
  EXPECT_NEAR(patches[0].t.at3(0, 0, 0), 0.2, 1e-12);
  EXPECT_NEAR(patches[0].t.at3(0, 0, 1), 0.1, 1e-12);
  EXPECT_NEAR(patches[0].t.at3(0, 0, 2), 0.2, 1e-12);
  const ColumnPatch& last = patches.back();
  EXPECT_EQ(last.slice, 3);
  EXPECT_NEAR(last.t.at3(0, 0, 0), 0.3, 1e-12);
  EXPECT_NEAR(last.t.at3(0, 0, 2), 0.3, 1e-12);
}

TEST(Patches, StrideOneCoversEveryAnnotatedCentre) {
  const SynthPair p = synth_pair(3, fast_cfg());
  const auto centers = patch_centers(p.prior.meta.oct_width, {7, 1});
  for (const Segment& s : segments_of(p.truth.prior_mask))
    for (int c = std::max(s.left, 3); c <= std::min(s.right, p.prior.meta.oct_width - 4); ++c)
      EXPECT_TRUE(std::binary_search(centers.begin(), centers.end(), c));
}

TEST(Pairing, IdentityIdenticalStudies) {
  const SynthPair p = synth_pair(5, fast_cfg());
  const DenoisedStudy d = denoise(p.prior);
  RegistrationResult reg;
  reg.status = RegStatus::automatic;
  const auto pairs = pair_patches(d, d, reg, {7, 3});
  ASSERT_FALSE(pairs.empty());
  for (const auto& s : pairs) {
    EXPECT_EQ(s.prior.t, s.current.t);
    EXPECT_EQ(s.match.prior, s.match.current);
    for (double v : s.mask) EXPECT_EQ(v, 0.0);
  }
}

TEST(Pairing, FollowsTrueTransform) {
  const SynthPair p = synth_pair(6, fast_cfg());
  const DenoisedStudy dp = denoise(p.prior), dc = denoise(p.current);
  RegistrationResult reg;
  reg.transform = p.truth.true_transform;
  reg.status = RegStatus::automatic;
  const SegmentsMatrix zeros(p.prior.meta.n_slices, p.prior.meta.oct_width);
  const PairLabels labels{&p.truth.prior_mask, &p.truth.current_mask};
  const auto pairs = pair_patches(dp, dc, reg, {7, 5}, &zeros, labels);
  ASSERT_GT(pairs.size(), 100u);
  int checked = 0;
  for (std::size_t i = 0; i < pairs.size(); i += 7, ++checked) {
    const auto& s = pairs[i];
    const Vec2 ir = p.truth.true_transform(oct_to_ir(s.match.prior, p.prior.meta));
    const auto truth = nearest_column(p.current.meta, ir);
    ASSERT_TRUE(truth.has_value());
    EXPECT_EQ(s.match.current, *truth);
    EXPECT_EQ(s.current.slice, truth->slice);
    EXPECT_EQ(s.current.column, truth->column);
    for (double v : s.mask) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(s.current_bit, p.truth.current_mask.at(truth->slice, truth->column) ? 1 : 0);
  }
  EXPECT_GT(checked, 10);
}

TEST(Pairing, DropsOnlyOutOfFovMatches) {
  Study s = blank_study(6, 8, 100);
  const DenoisedStudy d = denoise(s);
  RegistrationResult reg;
  reg.status = RegStatus::automatic;
  reg.transform.t = {14.0, 0.0};  // two slices down
  const auto pairs = pair_patches(d, d, reg, {7, 1});
  EXPECT_EQ(pairs.size(), 4u * 94u);
  for (const auto& p : pairs) EXPECT_EQ(p.match.current.slice, p.match.prior.slice + 2);
  reg.status = RegStatus::needs_manual;
  EXPECT_THROW(pair_patches(d, d, reg, {7, 1}), Error);
}

TEST(Pairing, MaskFeatureIsNeighbourhood) {
  SegmentsMatrix m(4, 10);
  m.set(1, 4);
  m.set(2, 5);
  const MaskFeature f = mask_feature(&m, 1, 5);
  const MaskFeature want{0, 0, 0, 1, 0, 0, 0, 1, 0};
  EXPECT_EQ(f, want);
  const MaskFeature edge = mask_feature(&m, 0, 0);
  for (double v : edge) EXPECT_EQ(v, 0.0);
}

TEST(Augment, MirrorIsInvolutionAndZeroRotationIsIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  nn::Tensor t({12, 7, 3});
  for (double& v : t.v) v = u(rng);
  EXPECT_EQ(mirror(mirror(t)), t);
  EXPECT_NE(mirror(t), t);
  const nn::Tensor r = rotate(t, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(r.v[i], t.v[i], 1e-9);
  const nn::Tensor r2 = rotate(t, deg_to_rad(2.0));
  EXPECT_NE(r2, t);
  const MaskFeature f{1, 0, 0, 0, 1, 0, 1, 1, 0};
  EXPECT_EQ(mirror(mirror(f)), f);
}

TEST(Augment, BalanceArithmetic) {
  std::vector<ColumnSample> samples;
  for (int i = 0; i < 10000; ++i) samples.push_back(labeled(0, 0.0));
  for (int i = 0; i < 100; ++i) samples.push_back(labeled(1, 1.0));
  const auto out = balance_and_augment(samples, {}, 42);
  ASSERT_EQ(out.size(), 500u);
  int pos = 0;
  for (const auto& s : out) pos += s.label;
  EXPECT_EQ(pos, 400);
}

TEST(Augment, DeterministicAndRequiresPositives) {
  std::vector<ColumnSample> samples;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 50; ++i) {
    ColumnSample s = labeled(i % 5 == 0, 0.0);
    for (double& v : s.patch.t.v) v = u(rng);
    samples.push_back(s);
  }
  const auto a = balance_and_augment(samples, {}, 9), b = balance_and_augment(samples, {}, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].patch.t, b[i].patch.t);
  std::vector<ColumnSample> neg(5, labeled(0, 0.0));
  try {
    balance_and_augment(neg, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no positive samples");
  }
}

TEST(Shard, RoundTrip) {
  const SynthPair p = synth_pair(7, fast_cfg());
  const DenoisedStudy dp = denoise(p.prior), dc = denoise(p.current);
  RegistrationResult reg;
  reg.transform = p.truth.true_transform;
  reg.status = RegStatus::automatic;
  const PairLabels labels{&p.truth.prior_mask, &p.truth.current_mask};
  auto pairs = pair_patches(dp, dc, reg, {7, 5}, &p.truth.prior_mask, labels);
  const auto stem = std::filesystem::temp_directory_path() / "octchange_shard_test";
  save_shard(pairs, stem);
  const auto back = load_shard(stem);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].prior.t, pairs[i].prior.t);
    EXPECT_EQ(back[i].current.t, pairs[i].current.t);
    EXPECT_EQ(back[i].mask, pairs[i].mask);
    EXPECT_EQ(back[i].current_bit, pairs[i].current_bit);
    EXPECT_EQ(back[i].match.current, pairs[i].match.current);
    EXPECT_EQ(back[i].prior.study_id, "S1");
  }
  std::string bin = read_file_bytes(stem.string() + ".bin");
  bin[17] ^= 1;
  write_file_bytes(stem.string() + ".bin", bin);
  EXPECT_THROW(load_shard(stem), Error);
}
