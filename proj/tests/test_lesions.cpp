#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "octchange/lesions/lesions.hpp"

using namespace octchange;

namespace {

// 49 slices over 343 rows (spacing 7), 300 columns over 300 px.
StudyMeta unit_meta() {
  StudyMeta m;
  m.n_slices = 49;
  m.oct_height = 64;
  m.oct_width = 300;
  m.oct_px_z_um = 4;
  m.oct_px_y_um = 20;
  m.ir_rows = 496;
  m.ir_cols = 496;
  m.ir_px_h_um = 20;
  m.ir_px_w_um = 20;
  m.fov_origin = {76, 98};
  m.fov_extent = {343, 300};
  m.fovea = {248, 248};
  m.acquired_at = "2020-01-01";
  return m;
}

Mask square(Mask m, int r0, int c0, int n) {
  for (int r = r0; r < r0 + n; ++r)
    for (int c = c0; c < c0 + n; ++c) m(r, c) = 1;
  return m;
}

// Reference labelling by repeated label propagation until a fixed point.
std::size_t oracle_components(const Mask& m) {
  Image<int> lab(m.rows(), m.cols(), 0);
  int next = 0;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      if (m(r, c)) lab(r, c) = ++next;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        if (!m(r, c)) continue;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= m.rows() || cc >= m.cols() || !m(rr, cc)) continue;
            if (lab(rr, cc) < lab(r, c)) {
              lab(r, c) = lab(rr, cc);
              changed = true;
            }
          }
      }
  }
  std::set<int> roots;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      if (m(r, c)) roots.insert(lab(r, c));
  return roots.size();
}

}  // namespace

TEST(Segments, Examples) {
  EXPECT_TRUE(columns_to_segments(Mask(1, 16, 0), 3).segments.empty());
  Mask bits(1, 7, 0);
  for (int c : {1, 2, 3, 5}) bits(0, c) = 1;
  const auto r = columns_to_segments(bits, 3);
  ASSERT_EQ(r.segments.size(), 1u);
  EXPECT_EQ(r.segments[0], (Segment{0, 1, 3}));
  EXPECT_FALSE(r.matrix.at(0, 5));
  const auto full = columns_to_segments(Mask(1, 1024, 1), 3);
  ASSERT_EQ(full.segments.size(), 1u);
  EXPECT_EQ(full.segments[0].length(), 1024);
}

TEST(Projection, EmptyMatrixGivesEmptyMask) {
  const StudyMeta m = unit_meta();
  EXPECT_EQ(count_nonzero(project_to_ir(SegmentsMatrix(49, 300), m)), 0u);
}

TEST(Projection, FullSliceIsSevenRowBandAcrossFov) {
  const StudyMeta m = unit_meta();
  SegmentsMatrix s(49, 300);
  for (int y = 0; y < 300; ++y) s.set(10, y);
  const Mask ir = project_to_ir(s, m);
  EXPECT_EQ(count_nonzero(ir), 7u * 300u);
  for (int r = 0; r < 496; ++r) {
    const bool in = r >= 76 + 70 && r < 76 + 77;
    EXPECT_EQ(ir(r, 98) != 0, in) << r;
    EXPECT_EQ(ir(r, 397) != 0, in) << r;
  }
  EXPECT_EQ(ir(150, 97), 0);
  EXPECT_EQ(ir(150, 398), 0);
}

TEST(Projection, AdjacentSlicesFormOneFourteenRowRegion) {
  const StudyMeta m = unit_meta();
  SegmentsMatrix s(49, 300);
  for (int y = 40; y < 80; ++y) {
    s.set(20, y);
    s.set(21, y);
  }
  const Components cc = connected_components(project_to_ir(s, m), m.ir_pixel_area_mm2());
  ASSERT_EQ(cc.lesions.size(), 1u);
  EXPECT_EQ(cc.lesions[0].bbox.h, 14.0);
  EXPECT_EQ(cc.lesions[0].size(), 14u * 40u);
}

TEST(Projection, RoundTripCountMatchesSegmentLengthsTimesSpacing) {
  const StudyMeta m = unit_meta();
  std::mt19937_64 rng(3);
  SegmentsMatrix s(49, 300);
  for (int x = 0; x < 49; ++x)
    for (int y = 0; y < 300; ++y)
      if (rng() % 5 == 0) s.set(x, y);
  std::size_t expect = 0;
  for (const Segment& g : segments_of(s)) expect += static_cast<std::size_t>(g.length()) * 7;
  EXPECT_EQ(count_nonzero(project_to_ir(s, m)), expect);
}

TEST(Projection, ShapeMismatchThrows) {
  EXPECT_THROW(project_to_ir(SegmentsMatrix(48, 300), unit_meta()), Error);
}

TEST(Projection, AddingBitsNeverShrinksLesions) {
  const StudyMeta m = unit_meta();
  std::mt19937_64 rng(4);
  SegmentsMatrix s(49, 300);
  for (int k = 0; k < 400; ++k) s.set(static_cast<int>(rng() % 49), static_cast<int>(rng() % 300));
  const Mask before = project_to_ir(s, m);
  for (int k = 0; k < 400; ++k) s.set(static_cast<int>(rng() % 49), static_cast<int>(rng() % 300));
  const Mask after = project_to_ir(s, m);
  for (int r = 0; r < 496; ++r)
    for (int c = 0; c < 496; ++c)
      if (before(r, c)) {
        EXPECT_TRUE(after(r, c));
      }
  // Every old lesion is contained in some new lesion that is at least as big.
  const Components a = connected_components(before, 1), b = connected_components(after, 1);
  for (const Lesion& l : a.lesions) {
    const int id = b.labels(l.pixels[0].r, l.pixels[0].c);
    EXPECT_GE(b.lesions[static_cast<std::size_t>(id - 1)].size(), l.size());
  }
}

TEST(Components, Examples) {
  EXPECT_TRUE(connected_components(Mask(20, 20, 0), 1).lesions.empty());
  Mask two = square(square(Mask(40, 40, 0), 2, 2, 10), 20, 20, 10);
  const Components cc = connected_components(two, 0.0004);
  ASSERT_EQ(cc.lesions.size(), 2u);
  EXPECT_EQ(cc.lesions[0].size(), 100u);
  EXPECT_EQ(cc.lesions[1].size(), 100u);
  EXPECT_NEAR(cc.lesions[0].area_mm2, 0.04, 1e-12);
  EXPECT_EQ(cc.lesions[0].boundary.size(), 36u);
  Mask diag(5, 5, 0);
  diag(1, 1) = diag(2, 2) = diag(3, 3) = 1;
  EXPECT_EQ(connected_components(diag, 1).lesions.size(), 1u);
  EXPECT_EQ(connected_components(diag, 1, 4).lesions.size(), 3u);
}

TEST(Components, PartitionAndOracleOnRandomMasks) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    Mask m(30, 37, 0);
    for (int r = 0; r < 30; ++r)
      for (int c = 0; c < 37; ++c) m(r, c) = rng() % 100 < 35 ? 1 : 0;
    const Components cc = connected_components(m, 1);
    EXPECT_EQ(cc.lesions.size(), oracle_components(m));
    std::size_t total = 0;
    for (const Lesion& l : cc.lesions) {
      total += l.size();
      for (const Pixel& p : l.pixels) EXPECT_EQ(cc.labels(p.r, p.c), l.id);
    }
    EXPECT_EQ(total, count_nonzero(m));
  }
}

TEST(AreaFilter, FlipsAt125PixelsFor20MicronPixels) {
  const double px = 0.02 * 0.02;
  auto lesion_of = [&](int n) {
    Mask m(20, 20, 0);
    for (int k = 0; k < n; ++k) m(k / 20, k % 20) = 1;
    return connected_components(m, px).lesions;
  };
  EXPECT_TRUE(filter_lesions(lesion_of(124)).empty());
  EXPECT_TRUE(filter_lesions(lesion_of(125)).empty());
  EXPECT_EQ(filter_lesions(lesion_of(126)).size(), 1u);
  EXPECT_TRUE(filter_lesions({}).empty());
}

TEST(CommonFov, Examples) {
  const StudyMeta m = unit_meta();
  EXPECT_EQ(common_fov(m, m, RigidTransform2D{}), m.fov());
  const Rect shifted = common_fov(m, m, RigidTransform2D(0.0, {50.0, 0.0}));
  EXPECT_DOUBLE_EQ(shifted.h, 343.0 - 50.0);
  EXPECT_DOUBLE_EQ(shifted.w, 300.0);
  EXPECT_THROW(common_fov(m, m, RigidTransform2D(0.0, {400.0, 0.0})), Error);
}

TEST(CommonFov, ContainedInBothMappedFovs) {
  const StudyMeta m = unit_meta();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-0.09, 0.09), t(-20, 20);
  for (int k = 0; k < 50; ++k) {
    const RigidTransform2D T = RigidTransform2D::about({248, 248}, a(rng), {t(rng), t(rng)});
    const Rect r = common_fov(m, m, T);
    const Rect b = transformed_bounds(m.fov(), T);
    EXPECT_GE(r.x0, m.fov().x0);
    EXPECT_LE(r.x1(), m.fov().x1());
    EXPECT_GE(r.x0, b.x0);
    EXPECT_LE(r.y1(), b.y1());
  }
}

TEST(Export, LabelImageAndJsonRoundTrip) {
  const StudyMeta m = unit_meta();
  SegmentsMatrix s(49, 300, "S1");
  for (int x = 10; x < 14; ++x)
    for (int y = 50; y < 90; ++y) s.set(x, y);
  for (int y = 200; y < 202; ++y) s.set(30, y);  // 14 px: filtered out
  const LesionMap lm = lesion_map(s, m);
  ASSERT_EQ(lm.lesions.size(), 1u);
  EXPECT_EQ(lm.lesions[0].size(), 4u * 7u * 40u);
  const auto dir = std::filesystem::temp_directory_path() / "octchange_lesions_test";
  std::filesystem::create_directories(dir);
  export_lesion_map(lm, dir / "S1_lesions");
  EXPECT_EQ(png::read_labels16(dir / "S1_lesions.png"), lm.labels);
  const auto j = nlohmann::json::parse(read_file_bytes(dir / "S1_lesions.json"));
  EXPECT_EQ(j["lesions"].size(), 1u);
  EXPECT_NEAR(j["lesions"][0]["area_mm2"].get<double>(), 1120 * 0.0004, 1e-12);
  std::filesystem::remove_all(dir);
}
