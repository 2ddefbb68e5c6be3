#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <thread>

#include "octchange/pipeline/serve.hpp"
#include "octchange/studyio/synth.hpp"

using namespace octchange;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_slices = 16;
  c.oct_height = 64;
  c.oct_width = 128;
  c.lesion_count = 2;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("octchange_pipeline_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Untrained weights: the tests here check plumbing, not accuracy.
fs::path write_models(const fs::path& dir, int height) {
  std::mt19937_64 rng(42);
  auto n1 = std::make_shared<nn::FeatureExtractor>("n1", 3, height, 7);
  auto n2 = std::make_shared<nn::FeatureExtractor>("n2", 6, height, 7);
  n1->init(rng);
  n2->init(rng);
  std::map<nn::Variant, nn::Classifier> cls;
  for (nn::Variant v : {nn::Variant::M1, nn::Variant::M3, nn::Variant::M3_P}) {
    nn::Classifier c;
    c.variant = v;
    if (nn::flags(v).n1) c.n1 = n1;
    if (nn::flags(v).n2) c.n2 = n2;
    c.head = nn::Head(v);
    c.head.init(rng);
    c.provenance = {0, 1, 0.5};
    cls[v] = std::move(c);
  }
  return nn::save_checkpoint(cls, dir / "model");
}

PipelineConfig config_for(const fs::path& root, nn::Variant v) {
  PipelineConfig cfg;
  cfg.variant = v;
  cfg.checkpoint = root / "model.json";
  cfg.output_dir = root / "work";
  return cfg;
}

Study with_date(Study s, const std::string& id, const std::string& date) {
  s.id = id;
  s.meta.acquired_at = date;
  return s;
}

struct Fixture {
  TempDir tmp;
  fs::path ckpt;
  explicit Fixture(const std::string& name) : tmp(name) { ckpt = write_models(tmp.path, small_config().oct_height); }
};

}  // namespace

TEST(Config, MergeValidateAndWrite) {
  PipelineConfig c;
  merge_config(c, {{"variant", "M3_M2"}, {"tau_reg", 0.4}, {"laterality", "OS"}, {"min_segment_len", 5}});
  EXPECT_EQ(c.variant, nn::Variant::M3_M2);
  EXPECT_DOUBLE_EQ(c.tau_reg, 0.4);
  EXPECT_EQ(c.eye, Eye::left);
  EXPECT_EQ(c.min_segment_len, 5);
  EXPECT_DOUBLE_EQ(c.d_reg, 3.0);
  EXPECT_THROW(merge_config(c, {{"tau", 0.4}}), Error);
  EXPECT_THROW(merge_config(c, {{"variant", "M9"}}), Error);

  PipelineConfig bad;
  bad.tau_reg = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.patch.w = 6;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.min_segment_len = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  EXPECT_THROW(bad.require_checkpoint(), Error);

  TempDir tmp("config");
  write_config(c, tmp.path);
  const PipelineConfig back = load_config(tmp.path / "config.json");
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Identity, SafeIds) {
  EXPECT_TRUE(safe_id("S1"));
  EXPECT_TRUE(safe_id("3f2a9c0d11e2b7aa"));
  EXPECT_TRUE(safe_id("study_2.v1"));
  EXPECT_FALSE(safe_id(".."));
  EXPECT_FALSE(safe_id("."));
  EXPECT_FALSE(safe_id("a/b"));
  EXPECT_FALSE(safe_id("../etc"));
  EXPECT_FALSE(safe_id(""));
  EXPECT_FALSE(safe_id(".hidden"));
}

TEST(Landmarks, Validation) {
  std::vector<PointPair> lm{{{10, 10}, {12, 11}}, {{200, 40}, {201, 42}}, {{80, 300}, {83, 301}}};
  EXPECT_NO_THROW(validate_landmarks(lm));
  EXPECT_THROW(validate_landmarks({lm[0], lm[1]}), Error);
  EXPECT_THROW(validate_landmarks({lm[0], lm[1], lm[0]}), Error);
  EXPECT_THROW(validate_landmarks({{{0, 0}, {0, 0}}, {{10, 10}, {10, 10}}, {{20, 20}, {21, 20}}}), Error);
}

TEST(RunPair, CorruptedCheckpointFailsBeforeAnyImageWork) {
  Fixture fx("corrupt");
  std::string bin = read_file_bytes(fx.tmp.path / "model.bin");
  bin[bin.size() / 2] = static_cast<char>(bin[bin.size() / 2] ^ 0x5a);
  write_file_bytes(fx.tmp.path / "model.bin", bin);
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M3);
  // The study directories do not exist: the checkpoint error must come first.
  try {
    run_pair(fx.tmp.path / "no_prior", fx.tmp.path / "no_current", cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(cfg.output_dir / "pairs"));

  PipelineConfig missing = cfg;
  missing.checkpoint = fx.tmp.path / "absent.json";
  EXPECT_THROW(run_pair(fx.tmp.path / "no_prior", fx.tmp.path / "no_current", missing), Error);
}

TEST(RunPair, SameStudyOneYearLaterReportsZeroProgression) {
  Fixture fx("zero");
  const SynthPair sp = synth_pair(3, small_config());
  const Study prior = with_date(sp.current, "A", "2021-03-01");
  const Study later = with_date(sp.current, "B", "2022-03-01");
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M1);
  const PairResult r = run_pair(prior, later, cfg, load_models(cfg));
  EXPECT_NE(r.registration.status, RegStatus::needs_manual);
  EXPECT_NEAR(r.report.elapsed_years, 1.0, 0.01);
  EXPECT_EQ(r.detection.prior.matrix, r.detection.current.matrix);
  EXPECT_DOUBLE_EQ(r.report.areal_rate, 0.0);
  EXPECT_EQ(r.report.delta_focality, 0);
  for (const auto& d : r.report.disk_rates) EXPECT_DOUBLE_EQ(d.area_mm2, 0.0);
  for (const auto& v : r.report.directional.compass) {
    if (v) {
      EXPECT_DOUBLE_EQ(*v, 0.0);
    }
  }
  for (const char* f : {"config.json", "job.json", "registration.json", "prior_segments.jsonl", "current_segments.jsonl",
                        "prior_lesions.png", "current_lesions.json", "report.json", "report.txt", "report.csv",
                        "provenance.json", "status.json", "images/overlay.png"})
    EXPECT_TRUE(fs::exists(r.dir / f)) << f;
}

TEST(RunPair, RepeatedRunsAreByteIdentical) {
  Fixture fx("determinism");
  const SynthPair sp = synth_pair(6, small_config());
  PipelineConfig a = config_for(fx.tmp.path, nn::Variant::M3);
  PipelineConfig b = a;
  b.output_dir = fx.tmp.path / "work2";
  const Models models = load_models(a);
  const PairResult ra = run_pair(sp.prior, sp.current, a, models);
  const PairResult rb = run_pair(sp.prior, sp.current, b, models);
  EXPECT_EQ(ra.pair_id, rb.pair_id);
  for (const char* f : {"report.json", "report.txt", "report.csv", "registration.json", "prior_segments.jsonl",
                        "current_segments.jsonl", "prior_lesions.png", "current_lesions.json", "images/overlay.png"})
    EXPECT_EQ(read_file_bytes(ra.dir / f), read_file_bytes(rb.dir / f)) << f;
  EXPECT_EQ(ra.provenance_hash, rb.provenance_hash);
}

TEST(RunPair, RejectsBadInputs) {
  Fixture fx("bad_inputs");
  const SynthPair sp = synth_pair(6, small_config());
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M3);
  const Models models = load_models(cfg);
  EXPECT_THROW(run_pair(sp.current, sp.prior, cfg, models), Error);  // dates reversed
  PairOptions opt;
  opt.variant = nn::Variant::M3_P;
  EXPECT_THROW(run_pair(sp.prior, sp.current, cfg, models, opt), Error);  // no prior mask
  opt.variant = nn::Variant::M3_M1;
  EXPECT_THROW(run_pair(sp.prior, sp.current, cfg, models, opt), Error);  // not in the checkpoint
  Study bad = sp.current;
  bad.id = "../x";
  EXPECT_THROW(run_pair(sp.prior, bad, cfg, models), Error);
}

TEST(RunPair, NeedsManualHaltsAndLandmarksResume) {
  Fixture fx("manual");
  const SynthPair sp = synth_pair(9, small_config());
  save_study(sp.prior, fx.tmp.path / "prior");
  save_study(sp.current, fx.tmp.path / "current");
  PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M3);
  cfg.tau_reg = 0.999;
  try {
    run_pair(fx.tmp.path / "prior", fx.tmp.path / "current", cfg);
    FAIL() << "expected needs_manual";
  } catch (const NeedsManualRegistration&) {
  }
  Service svc(cfg.output_dir);
  const auto pairs = nlohmann::json::parse(svc.list_pairs().body);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0]["status"], "needs_manual");
  const std::string id = pairs[0]["pair_id"];
  const fs::path dir = cfg.output_dir / "pairs" / id;
  EXPECT_TRUE(fs::exists(dir / "landmark_request.json"));
  EXPECT_FALSE(fs::exists(dir / "report.json"));
  EXPECT_EQ(svc.report(id).status, 409);

  const RigidTransform2D T = sp.truth.true_transform;
  nlohmann::json body{{"landmarks", nlohmann::json::array()}};
  for (Vec2 p : {Vec2{120, 140}, Vec2{300, 380}, Vec2{380, 150}})
    body["landmarks"].push_back({{"prior_xy", {p.x, p.y}}, {"current_xy", {T(p).x, T(p).y}}});

  nlohmann::json two = body;
  two["landmarks"].erase(2);
  EXPECT_EQ(svc.post_landmarks(id, two.dump()).status, 400);
  nlohmann::json stale = body;
  stale["revision"] = 7;
  EXPECT_EQ(svc.post_landmarks(id, stale.dump()).status, 409);
  EXPECT_EQ(svc.post_landmarks("nope", body.dump()).status, 404);

  const Response ok = svc.post_landmarks(id, body.dump());
  ASSERT_EQ(ok.status, 200) << ok.body;
  const auto j = nlohmann::json::parse(ok.body);
  EXPECT_EQ(j["status"], "manual");
  EXPECT_EQ(j["revision"], 1);
  EXPECT_FALSE(fs::exists(dir / "landmark_request.json"));
  EXPECT_EQ(svc.report(id).status, 200);
  const RegistrationResult reg = registration_from_json(read_json(dir / "registration.json"));
  EXPECT_NEAR(reg.transform.theta, T.theta, 1e-9);
  EXPECT_NEAR(norm(reg.transform.t - T.t), 0.0, 1e-6);

  // Re-submission replaces the landmark file instead of appending.
  body["revision"] = 1;
  ASSERT_EQ(svc.post_landmarks(id, body.dump()).status, 200);
  EXPECT_EQ(landmarks_from_string(read_file_bytes(dir / "landmarks.jsonl")).size(), 3u);
  EXPECT_EQ(nlohmann::json::parse(svc.pair_status(id).body)["revision"], 2);
}

TEST(Longitudinal, CascadeChainsPriorMasksAndProvenance) {
  Fixture fx("cascade");
  SynthConfig sc = small_config();
  sc.lesion_radius_min = 10;
  sc.lesion_radius_max = 16;
  auto [series, truth] = synth_series(21, sc, 3);
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M3);
  const Models models = load_models(cfg);
  const LongitudinalResult a = run_longitudinal(series, cfg, models);
  ASSERT_EQ(a.steps.size(), 2u);
  EXPECT_EQ(a.steps[0].result.variant, nn::Variant::M3);
  EXPECT_EQ(a.steps[1].result.variant, nn::Variant::M3_P);
  EXPECT_TRUE(a.steps[0].result.prior_mask_sha256.empty());
  EXPECT_EQ(a.steps[1].result.prior_mask_sha256, segments_digest(a.steps[0].result.detection.current.matrix));
  const auto prov = read_json(a.steps[1].result.dir / "provenance.json");
  EXPECT_EQ(prov["upstream"], a.steps[0].result.provenance_hash);
  EXPECT_EQ(prov["prior_mask_sha256"], a.steps[1].result.prior_mask_sha256);
  EXPECT_TRUE(fs::exists(cfg.output_dir / "longitudinal.json"));
  EXPECT_EQ(a.timeline["steps"].size(), 2u);

  // A validated prior for S2 replaces LS_2 in step 2 only.
  SegmentsMatrix corrected = a.steps[0].result.detection.current.matrix;
  for (int y = 40; y < 60; ++y) corrected.set(8, y);
  Service svc(cfg.output_dir);
  nlohmann::json body{{"slices", nlohmann::json::array()}};
  for (const auto& [k, ivs] : to_annotations(corrected).slices) {
    nlohmann::json iv = nlohmann::json::array();
    for (const Interval& i : ivs) iv.push_back({i.left, i.right});
    body["slices"].push_back({{"slice", k}, {"intervals", iv}});
  }
  ASSERT_EQ(svc.post_segments(series[1].id, body.dump()).status, 200);
  const LongitudinalResult b = run_longitudinal(series, cfg, models);
  EXPECT_EQ(b.steps[0].result.provenance_hash, a.steps[0].result.provenance_hash);
  EXPECT_EQ(b.steps[0].result.report_json, a.steps[0].result.report_json);
  EXPECT_EQ(b.steps[1].result.prior_mask_sha256, segments_digest(corrected));
  EXPECT_NE(b.steps[1].result.prior_mask_sha256, a.steps[1].result.prior_mask_sha256);
  EXPECT_TRUE(b.timeline["steps"][1]["prior_validated"].get<bool>());
  EXPECT_NE(b.steps[1].result.provenance_hash, a.steps[1].result.provenance_hash);
}

TEST(Longitudinal, IdenticalStudiesReportZeroProgression) {
  Fixture fx("flat");
  const SynthPair sp = synth_pair(4, small_config());
  std::vector<Study> series{with_date(sp.prior, "V1", "2020-01-01"), with_date(sp.prior, "V2", "2021-01-01"),
                            with_date(sp.prior, "V3", "2022-06-01")};
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M1);
  const LongitudinalResult r = run_longitudinal(series, cfg, load_models(cfg));
  ASSERT_EQ(r.steps.size(), 2u);
  for (const CascadeStep& s : r.steps) {
    EXPECT_DOUBLE_EQ(s.result.report.areal_rate, 0.0) << s.index;
    EXPECT_EQ(s.result.report.delta_focality, 0);
  }
  EXPECT_DOUBLE_EQ(r.timeline["mean_areal_rate_mm2_per_yr"].get<double>(), 0.0);
}

TEST(Longitudinal, RejectsUnorderedDatesAndShortSeries) {
  Fixture fx("order");
  const SynthPair sp = synth_pair(4, small_config());
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M3);
  const Models models = load_models(cfg);
  EXPECT_THROW(run_longitudinal({sp.prior}, cfg, models), Error);
  std::vector<Study> bad{with_date(sp.prior, "A", "2021-01-01"), with_date(sp.current, "B", "2021-01-01")};
  EXPECT_THROW(run_longitudinal(bad, cfg, models), Error);
  EXPECT_FALSE(fs::exists(cfg.output_dir / "pairs"));
}

TEST(Service, ValidatedSegmentsRoundTrip) {
  TempDir tmp("segments");
  Service svc(tmp.path);
  const nlohmann::json body{{"slices", {{{"slice", 3}, {"intervals", {{10, 29}}}}, {{"slice", 4}, {"intervals", {{5, 8}}}}}}};
  const Response r = svc.post_segments("S7", body.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(nlohmann::json::parse(r.body)["revision"], 1);

  nlohmann::json extended = body;
  extended["slices"][0]["intervals"][0][1] = 39;  // 10 columns longer
  extended["slices"][1]["intervals"] = nlohmann::json::array();
  extended["revision"] = 1;
  ASSERT_EQ(svc.post_segments("S7", extended.dump()).status, 200);
  const AnnotationSet a = load_annotations(validated_path(tmp.path, "S7"));
  ASSERT_EQ(a.slices.at(3).size(), 1u);
  EXPECT_EQ(a.slices.at(3)[0].right - a.slices.at(3)[0].left + 1, 30);
  EXPECT_TRUE(a.slices.at(4).empty());  // explicit empty record

  nlohmann::json overlap{{"slices", {{{"slice", 1}, {"intervals", {{0, 10}, {5, 12}}}}}}};
  EXPECT_EQ(svc.post_segments("S7", overlap.dump()).status, 400);
  EXPECT_EQ(svc.post_segments("S7", "{not json").status, 400);
  EXPECT_EQ(svc.post_segments("S7", body.dump()).status, 200);  // no revision: last writer wins
  extended["revision"] = 0;
  EXPECT_EQ(svc.post_segments("S7", extended.dump()).status, 409);
  EXPECT_EQ(svc.post_segments("..", body.dump()).status, 400);
}

TEST(Service, HttpEndpoints) {
  Fixture fx("http");
  const SynthPair sp = synth_pair(11, small_config());
  const PipelineConfig cfg = config_for(fx.tmp.path, nn::Variant::M3);
  const PairResult pr = run_pair(sp.prior, sp.current, cfg, load_models(cfg));

  Service svc(cfg.output_dir);
  httplib::Server srv;
  bind_routes(srv, svc);
  const int port = srv.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto get = [&](const std::string& path) {
    auto res = cli.Get(path);
    EXPECT_TRUE(res) << path;
    return res;
  };
  auto list = get("/pairs");
  ASSERT_EQ(list->status, 200);
  EXPECT_EQ(nlohmann::json::parse(list->body)[0]["pair_id"], pr.pair_id);

  const std::string base = "/pairs/" + pr.pair_id;
  auto imgs = get(base + "/images");
  ASSERT_EQ(imgs->status, 200);
  const auto ij = nlohmann::json::parse(imgs->body);
  for (const char* k : {"prior_ir", "current_ir", "overlay"}) {
    ASSERT_TRUE(ij.contains(k)) << k;
    auto png = get(ij[k].get<std::string>());
    EXPECT_EQ(png->status, 200);
    EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(png->body.substr(1, 3), "PNG");
  }

  auto rep = get(base + "/report");
  ASSERT_EQ(rep->status, 200);
  EXPECT_EQ(rep->body, pr.report_json);

  auto ov = get(base + "/overlays");
  ASSERT_EQ(ov->status, 200);
  const auto oj = nlohmann::json::parse(ov->body);
  EXPECT_EQ(oj["registration"]["status"], to_string(pr.registration.status));
  EXPECT_EQ(oj["prior_lesions"]["lesions"].size(), pr.prior_lesions.lesions.size());

  const ColumnMatcher cm = match_columns(sp.prior.meta, sp.current.meta, pr.registration.transform);
  for (int k : {0, 7, 15}) {
    auto sl = get(base + "/slices/" + std::to_string(k));
    ASSERT_EQ(sl->status, 200);
    const auto sj = nlohmann::json::parse(sl->body);
    const auto expect = matched_slice(cm, k);
    if (expect)
      EXPECT_EQ(sj["current_slice"], *expect);
    else
      EXPECT_TRUE(sj["current_slice"].is_null());
  }
  EXPECT_EQ(get(base + "/slices/99")->status, 404);
  EXPECT_EQ(get("/pairs/0000000000000000/report")->status, 404);
  EXPECT_EQ(get("/pairs/..%2F..%2Fetc/report")->status, 404);  // decodes to a path no route accepts
  EXPECT_EQ(get("/pairs/.env/report")->status, 400);
  EXPECT_EQ(get(base + "/images/secret.png")->status, 404);

  auto post = cli.Post("/studies/" + sp.prior.id + "/segments", R"({"slices": [{"slice": 0, "intervals": [[3, 9]]}]})",
                       "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 200);
  EXPECT_TRUE(fs::exists(validated_path(cfg.output_dir, sp.prior.id)));

  srv.stop();
  th.join();
}
