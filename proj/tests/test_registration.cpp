#include <gtest/gtest.h>

#include <random>

#include "octchange/registration/column_map.hpp"
#include "octchange/registration/register.hpp"
#include "octchange/studyio/synth.hpp"

using namespace octchange;

namespace {

ImageD line_image(int n, int width, double row) {
  ImageD img(n, n, 0.8);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (std::abs(r - row) <= (width - 1) / 2.0) img(r, c) = 0.3;
  return img;
}

StudyMeta study3_meta() {
  StudyMeta m;
  m.n_slices = 49;
  m.oct_height = 496;
  m.oct_width = 1500;
  m.oct_px_z_um = 3.9;
  m.oct_px_y_um = 4.0;
  m.ir_rows = m.ir_cols = 496;
  m.ir_px_h_um = m.ir_px_w_um = 20.0;
  m.fov_origin = {76, 98};
  m.fov_extent = {343, 300};
  m.acquired_at = "2020-01-01";
  return m;
}

SynthConfig fast_cfg() {
  SynthConfig cfg;
  cfg.oct_height = 16;
  cfg.oct_width = 300;
  return cfg;
}

}  // namespace

TEST(Transform, GroupLaws) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform2D a{u(rng) / 10, {u(rng), u(rng)}}, b{u(rng) / 10, {u(rng), u(rng)}};
    const RigidTransform2D id = compose(a, a.inverse());
    EXPECT_NEAR(std::remainder(id.theta, 2 * std::numbers::pi), 0.0, 1e-9);
    EXPECT_NEAR(id.t.x, 0.0, 1e-9);
    EXPECT_NEAR(id.t.y, 0.0, 1e-9);
    EXPECT_NEAR(a.determinant(), 1.0, 1e-12);
    const Vec2 p{u(rng), u(rng)};
    const Vec2 q = compose(a, b)(p), q2 = a(b(p));
    EXPECT_NEAR(q.x, q2.x, 1e-9);
    EXPECT_NEAR(q.y, q2.y, 1e-9);
    const Vec2 back = a.inverse()(a(p));
    EXPECT_NEAR(back.x, p.x, 1e-9);
    EXPECT_NEAR(back.y, p.y, 1e-9);
  }
}

TEST(Frangi, ConstantImageHasZeroResponse) {
  const Vesselness v = frangi_vesselness(ImageD(64, 64, 0.6));
  for (double x : v.response.data()) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(count_nonzero(v.mask), 0u);
}

TEST(Frangi, TooSmallImageRejected) { EXPECT_THROW(frangi_vesselness(ImageD(8, 8, 0.5)), Error); }

TEST(Frangi, DarkLineIsSegmented) {
  const int n = 96;
  const ImageD img = line_image(n, 3, 48);
  const Vesselness v = frangi_vesselness(img);
  // Skeleton row 48 dilated by one pixel, away from the replicate borders.
  int covered = 0, total = 0;
  for (int r = 47; r <= 49; ++r)
    for (int c = 10; c < n - 10; ++c) {
      ++total;
      covered += v.mask(r, c) != 0;
    }
  EXPECT_GE(covered, 0.9 * total);
  EXPECT_EQ(v.mask(20, 50), 0);
}

TEST(Frangi, BrightLineIgnored) {
  ImageD img = line_image(64, 3, 32);
  for (double& x : img.data()) x = 1.1 - x;
  const Vesselness v = frangi_vesselness(img);
  EXPECT_NEAR(v.response(32, 32), 0.0, 1e-12);
}

TEST(Frangi, BlobSuppressedRelativeToLine) {
  const int n = 128;
  ImageD img(n, n, 0.8);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      if (std::abs(r - 32) <= 1) img(r, c) = 0.3;
      if ((r - 90) * (r - 90) + (c - 64) * (c - 64) <= 4) img(r, c) = 0.3;
    }
  auto ratio = [&](double beta) {
    FrangiParams p;
    p.beta = beta;
    const Vesselness v = frangi_vesselness(img, p);
    return v.response(90, 64) / v.response(32, 64);
  };
  // At the blob centre λ1 = λ2, so the blob term is exp(-1/2β²): exp(-2) for
  // β = 0.5. Reaching 0.1 takes β = 0.4.
  EXPECT_LT(ratio(0.5), std::exp(-2.0));
  EXPECT_LE(ratio(0.4), 0.1);
}

TEST(Keypoints, IdenticalImagesMatchThemselves) {
  const SynthPair p = synth_pair(1, fast_cfg());
  const Vesselness v = frangi_vesselness(p.prior.ir);
  const auto pairs = detect_and_match(v.response, v.response);
  EXPECT_GE(pairs.size(), 50u);
  std::vector<double> d;
  for (const PointPair& q : pairs) d.push_back(norm(q.prior - q.current));
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  EXPECT_EQ(d[d.size() / 2], 0.0);
}

TEST(Keypoints, RotatedAndShiftedImageMatchesConsistently) {
  SynthConfig cfg = fast_cfg();
  cfg.max_rotation_deg = 0;
  cfg.max_translation_px = 0;
  const SynthPair p = synth_pair(2, cfg);
  const RigidTransform2D T = RigidTransform2D::about({248, 248}, deg_to_rad(3.0), {5, -8});
  ImageD moved(p.prior.ir.rows(), p.prior.ir.cols());
  const RigidTransform2D inv = T.inverse();
  for (int r = 0; r < moved.rows(); ++r)
    for (int c = 0; c < moved.cols(); ++c) {
      const Vec2 q = inv({static_cast<double>(r), static_cast<double>(c)});
      moved(r, c) = filters::bilinear(p.prior.ir, q.x, q.y);
    }
  const auto pairs = detect_and_match(frangi_vesselness(p.prior.ir).response, frangi_vesselness(moved).response);
  const std::size_t top = std::min<std::size_t>(50, pairs.size());
  ASSERT_GE(top, 20u);
  int good = 0;
  for (std::size_t i = 0; i < top; ++i) good += norm(T(pairs[i].prior) - pairs[i].current) <= 2.0;
  EXPECT_GE(good, 0.7 * top);
}

TEST(Keypoints, UnrelatedNoiseDoesNotRegister) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  ImageD a(200, 200), b(200, 200);
  for (double& x : a.data()) x = u(rng);
  for (double& x : b.data()) x = u(rng);
  const Vesselness va = frangi_vesselness(a), vb = frangi_vesselness(b);
  try {
    const auto pairs = detect_and_match(va.response, vb.response);
    const RansacResult r = ransac_rigid(pairs);
    EXPECT_LT(static_cast<double>(r.inliers.size()) / pairs.size(), 0.1);
  } catch (const Error& e) {
    SUCCEED() << e.what();
  }
}

TEST(Ransac, IdentityPairsGiveIdentity) {
  std::vector<PointPair> pairs;
  for (int i = 0; i < 20; ++i) pairs.push_back({{i * 3.0, 100.0 - i}, {i * 3.0, 100.0 - i}});
  const RansacResult r = ransac_rigid(pairs);
  EXPECT_EQ(r.inliers.size(), 20u);
  EXPECT_NEAR(r.transform.theta, 0.0, 1e-12);
  EXPECT_NEAR(norm(r.transform.t), 0.0, 1e-9);
}

TEST(Ransac, RecoversMotionDespiteOutliers) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 496);
  const RigidTransform2D truth{deg_to_rad(2.0), {10, 4}};
  std::vector<PointPair> pairs;
  for (int i = 0; i < 100; ++i) {
    const Vec2 a{u(rng), u(rng)};
    pairs.push_back({a, i < 30 ? Vec2{u(rng), u(rng)} : truth(a)});
  }
  const RansacResult r = ransac_rigid(pairs);
  EXPECT_NEAR(rad_to_deg(r.transform.theta), 2.0, 0.1);
  EXPECT_NEAR(r.transform.t.x, 10.0, 0.5);
  EXPECT_NEAR(r.transform.t.y, 4.0, 0.5);
  EXPECT_GE(r.inliers.size(), 70u);
}

TEST(Ransac, TwoExactPairsFitExactly) {
  const RigidTransform2D truth{0.3, {-4, 7}};
  const std::vector<PointPair> pairs{{{10, 20}, truth({10, 20})}, {{50, -3}, truth({50, -3})}};
  const RansacResult r = ransac_rigid(pairs);
  for (const PointPair& p : pairs) EXPECT_NEAR(residual(r.transform, p), 0.0, 1e-9);
  EXPECT_THROW(ransac_rigid(std::span<const PointPair>(pairs.data(), 1)), Error);
}

TEST(Ransac, DeterministicPerSeed) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<PointPair> pairs;
  for (int i = 0; i < 40; ++i) pairs.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  const RansacResult a = ransac_rigid(pairs), b = ransac_rigid(pairs);
  EXPECT_EQ(a.transform.theta, b.transform.theta);
  EXPECT_EQ(a.inliers, b.inliers);
}

TEST(Landmarks, ThreeIdentityPairs) {
  const std::vector<PointPair> pairs{{{1, 2}, {1, 2}}, {{40, 5}, {40, 5}}, {{7, 33}, {7, 33}}};
  const RigidTransform2D T = fit_rigid_from_landmarks(pairs);
  EXPECT_NEAR(T.theta, 0.0, 1e-12);
  EXPECT_NEAR(norm(T.t), 0.0, 1e-12);
}

TEST(Landmarks, ExactRecoveryFromFivePairs) {
  const RigidTransform2D truth{deg_to_rad(4.0), {-6, 9}};
  std::vector<PointPair> pairs;
  for (Vec2 a : {Vec2{10, 10}, Vec2{200, 30}, Vec2{120, 300}, Vec2{400, 410}, Vec2{33, 250}})
    pairs.push_back({a, truth(a)});
  const RigidTransform2D T = fit_rigid_from_landmarks(pairs);
  EXPECT_NEAR(T.theta, truth.theta, 1e-9);
  EXPECT_NEAR(T.t.x, -6.0, 1e-9);
  EXPECT_NEAR(T.t.y, 9.0, 1e-9);
}

TEST(Landmarks, TwoPairsRejected) {
  const std::vector<PointPair> pairs{{{1, 2}, {1, 2}}, {{40, 5}, {40, 5}}};
  try {
    fit_rigid_from_landmarks(pairs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "at least three landmarks required");
  }
  const std::vector<PointPair> same{{{1, 2}, {1, 2}}, {{1, 2}, {3, 2}}, {{1, 2}, {1, 5}}};
  EXPECT_THROW(fit_rigid_from_landmarks(same), Error);
}

TEST(Landmarks, FileRoundTrip) {
  const std::vector<PointPair> pairs{{{1.5, 2}, {3, 4.25}}, {{40, 5}, {41, 6}}};
  const auto back = landmarks_from_string(landmarks_to_string(pairs));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].prior, pairs[0].prior);
  EXPECT_EQ(back[1].current, pairs[1].current);
  EXPECT_THROW(landmarks_from_string("{\"prior_xy\": [1]}\n"), Error);
}

TEST(ColumnMap, CornerMapsToOrigin) {
  const StudyMeta m = study3_meta();
  const Vec2 p = oct_to_ir(OctColumn{0, 0}, m);
  EXPECT_EQ(p, m.fov_origin);
}

TEST(ColumnMap, MidpointSymmetry) {
  StudyMeta m = study3_meta();
  m.n_slices = 50;
  m.oct_width = 1024;
  m.fov_origin = {0, 0};
  m.fov_extent = {496, 496};
  const Vec2 p = oct_to_ir(OctColumn{25, 512}, m);
  EXPECT_DOUBLE_EQ(p.x, 248.0);
  EXPECT_DOUBLE_EQ(p.y, 248.0);
  EXPECT_THROW(oct_to_ir(OctColumn{50, 0}, m), Error);
  EXPECT_THROW(oct_to_ir(OctColumn{0, -1}, m), Error);
}

TEST(ColumnMap, InverseRoundTripOnGrid) {
  const StudyMeta m = study3_meta();
  for (int x = 0; x < 10; ++x)
    for (int y = 0; y < 32; ++y) {
      const OctColumn c{x * 4, y * 40};
      const auto back = nearest_column(m, oct_to_ir(c, m));
      ASSERT_TRUE(back.has_value());
      EXPECT_EQ(*back, c);
    }
}

TEST(ColumnMatch, IdentityMatchesItself) {
  const StudyMeta m = study3_meta();
  const ColumnMatcher cm = match_columns(m, m, RigidTransform2D::identity());
  const auto all = cm.all();
  ASSERT_EQ(all.size(), 49u * 1500u);
  for (const auto& mt : all) {
    ASSERT_TRUE(mt.has_value());
    EXPECT_EQ(mt->prior, mt->current);
  }
}

TEST(ColumnMatch, SliceShiftOfOneSpacing) {
  const StudyMeta m = study3_meta();
  const ColumnMatcher cm = match_columns(m, m, RigidTransform2D{0.0, {7.0, 0.0}});
  for (int k = 0; k < 48; ++k) {
    const auto mt = cm.match({k, 700});
    ASSERT_TRUE(mt.has_value());
    EXPECT_EQ(mt->current.slice, k + 1);
    EXPECT_EQ(mt->current.column, 700);
  }
  EXPECT_FALSE(cm.match({48, 700}).has_value());
  EXPECT_EQ(matched_slice(cm, 5), 6);
  EXPECT_FALSE(matched_slice(cm, 48).has_value());
  EXPECT_THROW(matched_slice(cm, 49), Error);
}

TEST(ColumnMatch, ColumnShiftOfFourIrPixels) {
  const StudyMeta m = study3_meta();
  ASSERT_DOUBLE_EQ(m.columns_per_ir_px(), 5.0);
  const ColumnMatcher cm = match_columns(m, m, RigidTransform2D{0.0, {0.0, 4.0}});
  for (int y = 0; y < 1480; y += 37) {
    const auto mt = cm.match({10, y});
    ASSERT_TRUE(mt.has_value());
    EXPECT_EQ(mt->current.column, y + 20);
    EXPECT_EQ(mt->current.slice, 10);
  }
}

TEST(ColumnMatch, SubPixelTiesRoundAwayFromZero) {
  StudyMeta m = study3_meta();
  m.ir_rows = m.ir_cols = 64;
  m.fov_origin = {0, 0};
  m.fov_extent = {64, 64};
  m.n_slices = 16;
  m.oct_width = 128;
  const ColumnMatcher cm = match_columns(m, m, RigidTransform2D{0.0, {2.0, 0.25}});
  const auto mt = cm.match({3, 10});
  ASSERT_TRUE(mt.has_value());
  EXPECT_EQ(mt->current.slice, 4);   // 3.5 slices -> 4
  EXPECT_EQ(mt->current.column, 11);  // 10.5 columns -> 11
}

TEST(Assess, IdenticalMasksAreAutomatic) {
  Mask m(50, 50, 0);
  for (int i = 5; i < 45; ++i) m(i, 20) = m(20, i) = 1;
  const RegistrationResult r = assess_registration(m, m, RigidTransform2D::identity());
  EXPECT_DOUBLE_EQ(r.vessel_overlap, 1.0);
  EXPECT_EQ(r.status, RegStatus::automatic);
  const RegistrationResult e = assess_registration(Mask(50, 50, 0), m, RigidTransform2D::identity());
  EXPECT_EQ(e.status, RegStatus::needs_manual);
  EXPECT_EQ(e.vessel_overlap, 0.0);
}

TEST(Assess, TrueTransformPassesAndOffsetFails) {
  const SynthPair p = synth_pair(3, fast_cfg());
  const VesselMaps v = vessel_maps(p.prior, p.current, {});
  const RegistrationResult good = assess_registration(v.prior.mask, v.current.mask, p.truth.true_transform);
  EXPECT_GE(good.vessel_overlap, 0.7);
  EXPECT_EQ(good.status, RegStatus::automatic);
  RigidTransform2D off = p.truth.true_transform;
  off.t = off.t + Vec2{30, 0};
  const RegistrationResult bad = assess_registration(v.prior.mask, v.current.mask, off);
  EXPECT_LT(bad.vessel_overlap, 0.5);
  EXPECT_EQ(bad.status, RegStatus::needs_manual);
}

TEST(Register, AutomaticOnSyntheticPair) {
  const SynthPair p = synth_pair(4, fast_cfg());
  const RegistrationResult r = register_studies(p.prior, p.current);
  EXPECT_EQ(r.status, RegStatus::automatic);
  for (Vec2 q : {Vec2{100, 120}, Vec2{400, 380}, Vec2{250, 250}})
    EXPECT_LT(norm(r.transform(q) - p.truth.true_transform(q)), 1.0);
  const RegistrationResult back = registration_from_json(to_json(r));
  EXPECT_EQ(back.status, r.status);
  EXPECT_NEAR(back.transform.theta, r.transform.theta, 1e-15);
}

TEST(Register, ManualFallbackUsesLandmarks) {
  const SynthPair p = synth_pair(4, fast_cfg());
  const VesselMaps v = vessel_maps(p.prior, p.current, {});
  std::vector<PointPair> lm;
  for (Vec2 a : {Vec2{100, 100}, Vec2{350, 150}, Vec2{200, 380}}) lm.push_back({a, p.truth.true_transform(a)});
  const RegistrationResult r = register_manual(v, lm);
  EXPECT_EQ(r.status, RegStatus::manual);
  EXPECT_GE(r.vessel_overlap, 0.5);
}

TEST(Register, DifferentIrPixelSizesAreRejected) {
  SynthPair p = synth_pair(1, fast_cfg());
  p.current.meta.ir_px_w_um *= 1.1;
  EXPECT_THROW(register_studies(p.prior, p.current), Error);
}
