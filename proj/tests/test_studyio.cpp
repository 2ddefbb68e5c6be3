#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "octchange/core/hash.hpp"
#include "octchange/studyio/annotations.hpp"
#include "octchange/studyio/study.hpp"
#include "octchange/studyio/synth.hpp"

using namespace octchange;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("octchange_studyio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig small_cfg() {
  SynthConfig cfg;
  cfg.oct_height = 64;
  cfg.oct_width = 256;
  return cfg;
}

Study tiny_study(int n_slices, int h, int w) {
  Study s;
  s.id = "tiny";
  s.meta.n_slices = n_slices;
  s.meta.oct_height = h;
  s.meta.oct_width = w;
  s.meta.oct_px_z_um = 3.9;
  s.meta.oct_px_y_um = 5.7;
  s.meta.ir_rows = s.meta.ir_cols = 32;
  s.meta.ir_px_h_um = s.meta.ir_px_w_um = 20.0;
  s.meta.fov_origin = {2, 3};
  s.meta.fov_extent = {21, 24};
  s.meta.fovea = {12.5, 15.0};
  s.meta.acquired_at = "2021-03-04";
  s.ir = ImageD(32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) s.ir(r, c) = png::quantize16((r * 32 + c) / 1023.0) / 65535.0;
  for (int k = 0; k < n_slices; ++k) {
    ImageD img(h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) img(r, c) = png::quantize16(((r + k) % 7) / 7.0) / 65535.0;
    s.slices.push_back(img);
  }
  return s;
}

}  // namespace

TEST(Meta, JsonRoundTripUsesExactKeys) {
  const Study s = tiny_study(3, 8, 10);
  const nlohmann::json j = s.meta;
  for (const char* key : {"n_slices", "oct_height", "oct_width", "oct_px_um", "ir_size", "ir_px_um", "fov_origin",
                          "fov_extent", "fovea_xy", "acquired_at"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.get<StudyMeta>(), s.meta);
}

TEST(Meta, SliceSpacingMatchesFovHeight) {
  StudyMeta m = synth_detail::Generator(1, SynthConfig{}).meta(0);
  EXPECT_DOUBLE_EQ(m.slice_spacing_px(), 7.0);
  EXPECT_EQ(m.n_slices, 49);
}

TEST(Meta, Validation) {
  StudyMeta m = tiny_study(3, 8, 10).meta;
  m.ir_px_h_um = 0;
  EXPECT_THROW(validate(m), Error);
  m = tiny_study(3, 8, 10).meta;
  m.fov_extent.x = 40;
  EXPECT_THROW(validate(m), Error);
}

TEST(Meta, IsoDates) {
  EXPECT_DOUBLE_EQ(parse_iso_days("1970-01-02"), 1.0);
  EXPECT_DOUBLE_EQ(parse_iso_days("1970-01-01T12:00:00"), 0.5);
  EXPECT_EQ(format_iso_days(parse_iso_days("2022-07-15")), "2022-07-15");
  EXPECT_EQ(format_iso_days(parse_iso_days("2022-07-15T06:30:00")), "2022-07-15T06:30:00");
  EXPECT_NEAR(elapsed_years("2020-01-01", "2022-01-01"), 731.0 / 365.25, 1e-12);
  EXPECT_THROW(parse_iso_days("yesterday"), Error);
}

TEST(StudyBundle, SaveLoadIsBitExact) {
  const fs::path dir = scratch("roundtrip") / "S1";
  const Study s = tiny_study(4, 12, 20);
  save_study(s, dir);
  const Study back = load_study(dir);
  EXPECT_EQ(back.id, "S1");
  EXPECT_EQ(back.meta, s.meta);
  EXPECT_EQ(back.ir, s.ir);
  ASSERT_EQ(back.slices.size(), s.slices.size());
  for (std::size_t k = 0; k < s.slices.size(); ++k) EXPECT_EQ(back.slices[k], s.slices[k]);
}

TEST(StudyBundle, EmptyScanRejected) {
  const fs::path dir = scratch("empty");
  Study s = tiny_study(1, 4, 4);
  nlohmann::json j = s.meta;
  j["n_slices"] = 0;
  std::ofstream(dir / "meta.json") << j.dump();
  png::write_gray16(dir / "ir.png", s.ir);
  try {
    load_study(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty scan");
  }
}

TEST(StudyBundle, SliceDimensionMismatchNamesTheSlice) {
  const fs::path dir = scratch("mismatch");
  const Study s = tiny_study(5, 12, 20);
  save_study(s, dir);
  png::write_gray16(dir / "oct" / slice_filename(3), ImageD(12, 19));
  try {
    load_study(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "dimension mismatch at slice 3");
  }
}

TEST(StudyBundle, MissingFileAndBadResolution) {
  const fs::path dir = scratch("missing");
  const Study s = tiny_study(2, 4, 6);
  save_study(s, dir);
  fs::remove(dir / "oct" / slice_filename(1));
  EXPECT_THROW(load_study(dir), Error);

  save_study(s, dir);
  nlohmann::json j = s.meta;
  j["ir_px_um"] = {0.0, 20.0};
  std::ofstream(dir / "meta.json") << j.dump();
  try {
    load_study(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "non-positive resolution");
  }
}

TEST(StudyBundle, EightBitIrNormalized) {
  const fs::path dir = scratch("eightbit");
  const Study s = tiny_study(1, 4, 6);
  save_study(s, dir);
  png::detail::write_raw(dir / "ir.png", 32, 32, 8, PNG_COLOR_TYPE_GRAY, std::vector<std::uint8_t>(32 * 32, 255), 32);
  const Study back = load_study(dir);
  EXPECT_DOUBLE_EQ(back.ir(5, 5), 1.0);
}

TEST(StudyBundle, ResampleKeepsGeometryProportional) {
  Study s = tiny_study(2, 4, 6);
  const Study r = resample_ir_grid(s, 10.0, 10.0);
  EXPECT_EQ(r.meta.ir_rows, 64);
  EXPECT_DOUBLE_EQ(r.meta.fov_origin.x, 4.0);
  EXPECT_DOUBLE_EQ(r.meta.fovea.y, 30.0);
  EXPECT_EQ(resample_ir_grid(s, 20.0, 20.0).ir, s.ir);
}

TEST(Annotations, EmptySetRoundTrips) {
  const fs::path p = scratch("ann_empty") / "a.jsonl";
  save_annotations({}, p);
  EXPECT_EQ(read_file_bytes(p), "");
  EXPECT_EQ(load_annotations(p), AnnotationSet{});
}

TEST(Annotations, SingleIntervalRoundTripsBitExact) {
  const fs::path p = scratch("ann_one") / "a.jsonl";
  AnnotationSet a;
  a.slices[5] = {{100, 250}};
  save_annotations(a, p);
  const std::string bytes = read_file_bytes(p);
  EXPECT_EQ(bytes, "{\"intervals\":[[100,250]],\"slice\":5}\n");
  EXPECT_EQ(load_annotations(p), a);
  save_annotations(load_annotations(p), p);
  EXPECT_EQ(read_file_bytes(p), bytes);
}

TEST(Annotations, ReversedIntervalRejected) {
  EXPECT_THROW(annotations_from_string("{\"slice\":5,\"intervals\":[[250,100]]}\n"), Error);
  EXPECT_THROW(annotations_from_string("{\"slice\":5,\"intervals\":[[1,10],[5,20]]}\n"), Error);
  EXPECT_THROW(annotations_from_string("{\"slice\":5,\"intervals\":[[1,\n"), Error);
}

TEST(Annotations, MatrixConversionRoundTrips) {
  SegmentsMatrix m(4, 30, "x");
  for (int c = 3; c <= 9; ++c) m.set(1, c);
  for (int c = 20; c <= 29; ++c) m.set(3, c);
  const AnnotationSet a = to_annotations(m);
  EXPECT_EQ(a.slices.size(), 4u);
  EXPECT_TRUE(a.slices.at(0).empty());
  EXPECT_EQ(to_matrix(annotations_from_string(annotations_to_string(a)), 4, 30), m);
  EXPECT_THROW(to_matrix(a, 4, 25), Error);
}

TEST(Synth, SameSeedIsBitIdentical) {
  const SynthConfig cfg = small_cfg();
  const SynthPair a = synth_pair(7, cfg);
  const SynthPair b = synth_pair(7, cfg);
  EXPECT_EQ(a.prior.ir, b.prior.ir);
  EXPECT_EQ(a.current.ir, b.current.ir);
  for (int k = 0; k < cfg.n_slices; ++k) EXPECT_EQ(a.current.slices[k], b.current.slices[k]);
  EXPECT_EQ(a.truth.current_mask, b.truth.current_mask);
  const SynthPair c = synth_pair(8, cfg);
  EXPECT_NE(a.prior.ir, c.prior.ir);
}

TEST(Synth, GrowthFactorIsRespected) {
  SynthConfig cfg = small_cfg();
  cfg.growth_factor = 2.0;
  const SynthPair p = synth_pair(1, cfg);
  const double ratio =
      static_cast<double>(p.truth.current_mask.count()) / static_cast<double>(p.truth.prior_mask.count());
  EXPECT_GE(ratio, 1.9);
  EXPECT_LE(ratio, 2.1);
  EXPECT_GT(p.truth.prior_mask.count(), 0u);
}

TEST(Synth, IdentityTransformGivesIdenticalVesselMasks) {
  SynthConfig cfg = small_cfg();
  cfg.max_rotation_deg = 0;
  cfg.max_translation_px = 0;
  const SynthPair p = synth_pair(3, cfg);
  EXPECT_EQ(p.truth.vessel_masks[0], p.truth.vessel_masks[1]);
  EXPECT_GT(count_nonzero(p.truth.vessel_masks[0]), 1000u);
  EXPECT_NEAR(p.truth.true_transform.theta, 0.0, 0.0);
}

TEST(Synth, TransformWithinConfiguredRange) {
  const SynthConfig cfg = small_cfg();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SynthPair p = synth_pair(seed, cfg);
    EXPECT_LE(std::abs(rad_to_deg(p.truth.true_transform.theta)), 5.0);
    const Vec2 c{cfg.ir_size / 2.0, cfg.ir_size / 2.0};
    const Vec2 shift = p.truth.true_transform(c) - c;
    EXPECT_LE(std::abs(shift.x), 20.0);
    EXPECT_LE(std::abs(shift.y), 20.0);
  }
}

TEST(Synth, VesselsAreDarkerThanBackground) {
  const SynthPair p = synth_pair(2, small_cfg());
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (int r = 0; r < p.prior.ir.rows(); ++r)
    for (int c = 0; c < p.prior.ir.cols(); ++c) {
      if (p.truth.vessel_masks[0](r, c)) {
        in += p.prior.ir(r, c);
        ++n_in;
      } else {
        out += p.prior.ir(r, c);
        ++n_out;
      }
    }
  EXPECT_LT(in / n_in, out / n_out - 0.1);
}

TEST(Synth, AtrophyColumnsAreHypertransmissive) {
  const SynthConfig cfg = small_cfg();
  const SynthPair p = synth_pair(4, cfg);
  for (const auto* pr : {&p.prior, &p.current}) {
    const SegmentsMatrix& m = pr == &p.prior ? p.truth.prior_mask : p.truth.current_mask;
    double atro = 0, healthy = 0;
    std::size_t na = 0, nh = 0;
    const int z0 = static_cast<int>(0.75 * cfg.oct_height);
    for (int s = 0; s < cfg.n_slices; ++s)
      for (int c = 0; c < cfg.oct_width; ++c) {
        double v = 0;
        for (int z = z0; z < cfg.oct_height; ++z) v += pr->slices[s](z, c);
        v /= cfg.oct_height - z0;
        if (m.at(s, c)) {
          atro += v;
          ++na;
        } else {
          healthy += v;
          ++nh;
        }
      }
    ASSERT_GT(na, 0u);
    EXPECT_GT(atro / na, healthy / nh + 0.1);
  }
}

TEST(Synth, SeriesGrowsGeometrically) {
  SynthConfig cfg = small_cfg();
  cfg.lesion_radius_min = 10;
  cfg.lesion_radius_max = 16;
  const auto [studies, truth] = synth_series(11, cfg, 4);
  ASSERT_EQ(studies.size(), 4u);
  for (int k = 1; k < 4; ++k) {
    const double r = static_cast<double>(truth.masks[k].count()) / truth.masks[k - 1].count();
    EXPECT_NEAR(r, 2.0, 0.1) << k;
    EXPECT_GT(parse_iso_days(studies[k].meta.acquired_at), parse_iso_days(studies[k - 1].meta.acquired_at));
  }
}

TEST(Synth, ImpossibleConfigsRejected) {
  SynthConfig cfg = small_cfg();
  cfg.lesion_radius_min = 150;
  cfg.lesion_radius_max = 160;
  EXPECT_THROW(synth_pair(1, cfg), Error);
  cfg = small_cfg();
  cfg.fov_origin = {2, 2};
  cfg.fov_extent = {490, 490};
  EXPECT_THROW(synth_pair(1, cfg), Error);
}

TEST(Synth, SavedStudiesReloadExactly) {
  const SynthPair p = synth_pair(5, small_cfg());
  const fs::path dir = scratch("synth_save") / "S1";
  save_study(p.prior, dir);
  const Study back = load_study(dir);
  EXPECT_EQ(back.ir, p.prior.ir);
  EXPECT_EQ(back.slices[10], p.prior.slices[10]);
}
