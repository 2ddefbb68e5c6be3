#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"
#include "octchange/core/hash.hpp"
#include "octchange/core/png_io.hpp"
#include "octchange/lesions/lesions.hpp"
#include "octchange/lesions/segments.hpp"
#include "octchange/measure/measure.hpp"
#include "octchange/nnet/checkpoint.hpp"
#include "octchange/nnet/networks.hpp"
#include "octchange/pipeline/config.hpp"
#include "octchange/registration/register.hpp"
#include "octchange/studyio/annotations.hpp"
#include "octchange/studyio/study.hpp"

namespace octchange {

namespace fs = std::filesystem;

// ------------------------------------------------------------ identities --

inline bool safe_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_-][A-Za-z0-9._-]{0,127}");
  return std::regex_match(id, re) && id != "." && id != "..";
}

inline void require_safe_id(const std::string& id, const char* what) {
  if (!safe_id(id)) throw Error(std::string("invalid ") + what + " id '" + id + "'");
}

// Content digest of a study: metadata plus every stored sample.
inline std::string study_digest(const Study& s) {
  nlohmann::json mj = s.meta;
  std::string bytes = mj.dump();
  auto put = [&](const ImageD& img) {
    const auto d = img.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  };
  put(s.ir);
  for (const ImageD& sl : s.slices) put(sl);
  return sha256_hex(bytes);
}

inline std::string pair_id_of(const std::string& prior_digest, const std::string& current_digest) {
  return sha256_hex(prior_digest + ":" + current_digest).substr(0, 16);
}

inline std::string segments_digest(const SegmentsMatrix& m) { return sha256_hex(annotations_to_string(to_annotations(m))); }

// -------------------------------------------------------- validated priors --

inline fs::path validated_path(const fs::path& work, const std::string& study_id) {
  require_safe_id(study_id, "study");
  return work / "studies" / study_id / "validated_segments.jsonl";
}

// Replaces any stored prior for the study.
inline fs::path store_validated(const fs::path& work, const std::string& study_id, const AnnotationSet& a) {
  const fs::path p = validated_path(work, study_id);
  save_annotations(a, p);
  return p;
}

inline std::optional<SegmentsMatrix> load_validated(const fs::path& work, const Study& s) {
  const fs::path p = validated_path(work, s.id);
  if (!fs::exists(p)) return std::nullopt;
  return to_matrix(load_annotations(p), s.meta.n_slices, s.meta.oct_width, s.id);
}

// -------------------------------------------------------------- landmarks --

// At least three pairs, no repeated point, prior points not all on one line.
inline void validate_landmarks(const std::vector<PointPair>& lm) {
  if (lm.size() < 3) throw Error("at least three landmark pairs are required, got " + std::to_string(lm.size()));
  for (std::size_t i = 0; i < lm.size(); ++i)
    for (std::size_t j = i + 1; j < lm.size(); ++j)
      if (norm(lm[i].prior - lm[j].prior) < 1e-9 || norm(lm[i].current - lm[j].current) < 1e-9)
        throw Error("duplicate landmark point (pairs " + std::to_string(i) + " and " + std::to_string(j) + ")");
  double spread = 0, area = 0;
  for (std::size_t i = 0; i < lm.size(); ++i)
    for (std::size_t j = 0; j < lm.size(); ++j) {
      spread = std::max(spread, norm(lm[i].prior - lm[j].prior));
      for (std::size_t k = 0; k < lm.size(); ++k)
        area = std::max(area, std::abs(cross(lm[j].prior - lm[i].prior, lm[k].prior - lm[i].prior)));
    }
  if (area <= 1e-6 * spread * spread) throw Error("landmark points are collinear");
}

// -------------------------------------------------------------- detection --

using Models = std::map<nn::Variant, nn::Classifier>;

inline Models load_models(const PipelineConfig& cfg) {
  cfg.require_checkpoint();
  Models m = nn::load_checkpoint(cfg.checkpoint);
  if (!m.count(cfg.variant)) throw Error("checkpoint has no variant " + nn::to_string(cfg.variant));
  return m;
}

inline const nn::Classifier& pick(const Models& m, nn::Variant v) {
  const auto it = m.find(v);
  if (it == m.end()) throw Error("checkpoint has no variant " + nn::to_string(v));
  return it->second;
}

struct Detection {
  SegmentsResult prior, current;
};

// Simultaneous detection over every matched column pair. A current column
// reached from several prior columns is atrophic if any of them says so.
inline Detection detect(const nn::Classifier& c, const DenoisedStudy& prior, const DenoisedStudy& current,
                        const RegistrationResult& reg, const PatchConfig& pc, int min_segment_len,
                        const SegmentsMatrix* prior_mask = nullptr) {
  pc.validate();
  c.check();
  const nn::VariantFlags f = nn::flags(c.variant);
  if (f.mask && !prior_mask) throw Error("variant " + nn::to_string(c.variant) + " needs a prior mask");
  if (c.patch_height() != prior.meta().oct_height || c.patch_height() != current.meta().oct_height)
    throw Error("model patch height " + std::to_string(c.patch_height()) + " does not match the scan height");
  const auto& fe = c.n1 ? c.n1 : c.n2;
  if (fe->width != pc.w) throw Error("model patch width " + std::to_string(fe->width) + " does not match config");
  if (prior_mask && (prior_mask->n_slices() != prior.meta().n_slices || prior_mask->width() != prior.meta().oct_width))
    throw Error("prior mask does not match the prior scan");

  Mask pb(prior.meta().n_slices, prior.meta().oct_width, 0);
  Mask cb(current.meta().n_slices, current.meta().oct_width, 0);
  for_each_pair(prior, current, reg, pc, [&](int, int, const ColumnMatch& m) {
    const ColumnPairSample s = make_pair_sample(prior, current, m, pc.w, f.mask ? prior_mask : nullptr, {});
    const nn::ScorePair sc = c.scores(s);
    if (sc.prior >= c.th) pb(m.prior.slice, m.prior.column) = 1;
    if (sc.current >= c.th) cb(m.current.slice, m.current.column) = 1;
  });
  return {columns_to_segments(pb, min_segment_len, prior.id()), columns_to_segments(cb, min_segment_len, current.id())};
}

// ---------------------------------------------------------------- overlay --

inline png::RgbImage overlay_image(const ImageD& ir, const Mask& prior_warped, const Mask& current, const Rect& fov) {
  png::RgbImage out(ir.rows(), ir.cols());
  for (int r = 0; r < ir.rows(); ++r)
    for (int c = 0; c < ir.cols(); ++c) {
      const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(ir(r, c), 0.0, 1.0) * 255.0));
      out(r, c) = {g, g, g};
    }
  auto edge = [](const Mask& m, int r, int c) {
    if (!m(r, c)) return false;
    return !m.clamped(r - 1, c) || !m.clamped(r + 1, c) || !m.clamped(r, c - 1) || !m.clamped(r, c + 1);
  };
  for (int r = 0; r < ir.rows(); ++r)
    for (int c = 0; c < ir.cols(); ++c) {
      if (edge(prior_warped, r, c)) out(r, c) = {64, 220, 64};
      if (edge(current, r, c)) out(r, c) = {240, 64, 64};
    }
  const int r0 = static_cast<int>(std::floor(fov.x0)), r1 = static_cast<int>(std::ceil(fov.x1())) - 1;
  const int c0 = static_cast<int>(std::floor(fov.y0)), c1 = static_cast<int>(std::ceil(fov.y1())) - 1;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if ((r == r0 || r == r1 || c == c0 || c == c1) && out.in_bounds(r, c)) out(r, c) = {240, 220, 40};
  return out;
}

// ------------------------------------------------------------------- jobs --

struct PairOptions {
  std::optional<nn::Variant> variant;            // defaults to cfg.variant
  std::optional<SegmentsMatrix> prior_mask;      // LS_i of a cascade step
  bool prior_validated = false;
  std::string upstream;                          // provenance hash of the step that produced prior_mask
  fs::path prior_dir, current_dir;               // recorded so a blocked job can be resumed
};

struct PairResult {
  std::string pair_id;
  fs::path dir;
  nn::Variant variant = nn::Variant::M3;
  RegistrationResult registration;
  Detection detection;
  SegmentsMatrix prior_input;  // lesions measured for the prior study
  LesionMap prior_lesions, current_lesions;
  ProgressionReport report;
  std::string report_json;
  std::string prior_mask_sha256;  // empty without a prior mask
  std::string provenance_hash;
};

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file_bytes(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(p.string() + ": " + e.what());
  }
}

inline int job_revision(const fs::path& dir) {
  const fs::path p = dir / "status.json";
  return fs::exists(p) ? read_json(p).value("revision", 0) : 0;
}

inline void write_status(const fs::path& dir, const std::string& status, int revision, const std::string& detail = {}) {
  nlohmann::json j{{"status", status}, {"revision", revision}};
  if (!detail.empty()) j["detail"] = detail;
  write_file_bytes(dir / "status.json", j.dump(2) + "\n");
}

// Steps of the pair pipeline: register, detect, segments and lesions,
// report. Every artifact lands in <output>/pairs/<pair id>/. A failed
// vessel-overlap check writes landmark_request.json and throws
// NeedsManualRegistration; landmarks.jsonl in the job resumes it.
inline PairResult run_pair(const Study& prior, const Study& current, const PipelineConfig& cfg, const Models& models,
                           const PairOptions& opt = {}) {
  cfg.validate();
  PairResult res;
  res.variant = opt.variant.value_or(cfg.variant);
  const nn::Classifier& cls = pick(models, res.variant);
  if (nn::flags(res.variant).mask && !opt.prior_mask)
    throw Error("variant " + nn::to_string(res.variant) + " needs a prior mask");
  require_safe_id(prior.id, "study");
  require_safe_id(current.id, "study");
  validate(prior);
  validate(current);
  if (!(parse_iso_days(current.meta.acquired_at) > parse_iso_days(prior.meta.acquired_at)))
    throw Error("current study " + current.id + " is not later than prior study " + prior.id);

  const std::string pd = study_digest(prior), cd = study_digest(current);
  res.pair_id = pair_id_of(pd, cd);
  res.dir = cfg.output_dir / "pairs" / res.pair_id;
  fs::create_directories(res.dir);
  const int revision = job_revision(res.dir);
  write_config(cfg, res.dir);
  if (opt.prior_mask) {
    res.prior_mask_sha256 = segments_digest(*opt.prior_mask);
    save_annotations(to_annotations(*opt.prior_mask), res.dir / "prior_mask.jsonl");
  } else if (fs::exists(res.dir / "prior_mask.jsonl")) {
    fs::remove(res.dir / "prior_mask.jsonl");
  }
  auto study_json = [](const Study& s, const std::string& digest, const fs::path& dir) {
    nlohmann::json j{{"id", s.id}, {"sha256", digest}, {"meta", s.meta}};
    j["dir"] = dir.empty() ? nlohmann::json() : nlohmann::json(fs::absolute(dir).string());
    return j;
  };
  const nlohmann::json job{{"pair_id", res.pair_id},
                           {"prior", study_json(prior, pd, opt.prior_dir)},
                           {"current", study_json(current, cd, opt.current_dir)},
                           {"variant", nn::to_string(res.variant)},
                           {"prior_mask", opt.prior_mask ? nlohmann::json("prior_mask.jsonl") : nlohmann::json()},
                           {"prior_validated", opt.prior_validated},
                           {"upstream", opt.upstream}};
  write_file_bytes(res.dir / "job.json", job.dump(2) + "\n");

  // 1. Registration.
  const RegistrationConfig rc = cfg.registration();
  const VesselMaps vm = vessel_maps(prior, current, rc);
  const fs::path lm_path = res.dir / "landmarks.jsonl";
  if (fs::exists(lm_path)) {
    const auto lm = landmarks_from_string(read_file_bytes(lm_path));
    validate_landmarks(lm);
    res.registration = register_manual(vm, lm, cfg.tau_reg);
  } else {
    res.registration = register_auto(vm, rc);
  }
  write_file_bytes(res.dir / "registration.json", to_json(res.registration).dump(2) + "\n");
  fs::create_directories(res.dir / "images");
  png::write_gray16(res.dir / "images" / "prior_ir.png", prior.ir);
  png::write_gray16(res.dir / "images" / "current_ir.png", current.ir);
  if (res.registration.status == RegStatus::needs_manual) {
    const nlohmann::json req{{"pair_id", res.pair_id},
                             {"status", "needs_manual"},
                             {"vessel_dice", res.registration.vessel_overlap},
                             {"tau_reg", cfg.tau_reg},
                             {"min_pairs", 3},
                             {"prior_image", "images/prior_ir.png"},
                             {"current_image", "images/current_ir.png"},
                             {"submit", "/pairs/" + res.pair_id + "/landmarks"},
                             {"format", {{"prior_xy", {"row", "col"}}, {"current_xy", {"row", "col"}}}}};
    write_file_bytes(res.dir / "landmark_request.json", req.dump(2) + "\n");
    write_status(res.dir, "needs_manual", revision);
    throw NeedsManualRegistration("pair " + res.pair_id + ": vessel overlap " +
                                  std::to_string(res.registration.vessel_overlap) +
                                  " below tau_reg; landmarks requested");
  }
  if (fs::exists(res.dir / "landmark_request.json")) fs::remove(res.dir / "landmark_request.json");

  // 2-3. Detection, segments, lesions.
  const DenoisedStudy dp = denoise(prior), dc = denoise(current);
  res.detection = detect(cls, dp, dc, res.registration, cfg.patch, cfg.min_segment_len,
                         opt.prior_mask ? &*opt.prior_mask : nullptr);
  res.prior_input = opt.prior_mask ? *opt.prior_mask : res.detection.prior.matrix;
  res.prior_input.study_id = prior.id;
  save_annotations(to_annotations(res.detection.prior.matrix), res.dir / "prior_segments.jsonl");
  save_annotations(to_annotations(res.detection.current.matrix), res.dir / "current_segments.jsonl");
  res.prior_lesions = lesion_map(res.prior_input, prior.meta, cfg.min_area_mm2);
  res.current_lesions = lesion_map(res.detection.current.matrix, current.meta, cfg.min_area_mm2);
  export_lesion_map(res.prior_lesions, res.dir / "prior_lesions");
  export_lesion_map(res.current_lesions, res.dir / "current_lesions");

  // 4. Report.
  const MeasureConfig mc = cfg.measurement();
  const Mask prior_ir = project_to_ir(res.prior_input, prior.meta);
  const Mask current_ir = project_to_ir(res.detection.current.matrix, current.meta);
  res.report = build_report({prior.id, prior.meta, prior_ir}, {current.id, current.meta, current_ir},
                            res.registration.transform, mc);
  res.report_json = to_json(res.report).dump(2) + "\n";
  write_file_bytes(res.dir / "report.json", res.report_json);
  write_file_bytes(res.dir / "report.txt", report_text(res.report));
  write_file_bytes(res.dir / "report.csv", report_csv_header() + "\n" + report_csv_row(res.report) + "\n");

  const Mask region = rect_mask(res.report.common_fov, current.meta.ir_rows, current.meta.ir_cols);
  const Mask warped = mask_and(warp_mask(prior_ir, res.registration.transform, current.meta.ir_rows, current.meta.ir_cols),
                               region);
  png::write_rgb(res.dir / "images" / "overlay.png",
                 overlay_image(current.ir, warped, mask_and(current_ir, region), res.report.common_fov));

  // Provenance: the chain hash covers everything this step's report depends on.
  nlohmann::json settings = to_json(cfg);
  settings.erase("output_dir");
  settings.erase("checkpoint");  // covered by its content hash
  const std::string config_sha = sha256_hex(settings.dump());
  const std::string ckpt_sha = fs::exists(cfg.checkpoint) ? sha256_file(cfg.checkpoint) : std::string();
  const std::string report_sha = sha256_hex(res.report_json);
  const std::string current_sha = segments_digest(res.detection.current.matrix);
  res.provenance_hash = sha256_hex(opt.upstream + "|" + pd + "|" + cd + "|" + nn::to_string(res.variant) + "|" +
                                   res.prior_mask_sha256 + "|" + config_sha + "|" + ckpt_sha + "|" + report_sha);
  const nlohmann::json prov{{"pair_id", res.pair_id},
                            {"variant", nn::to_string(res.variant)},
                            {"prior_study_sha256", pd},
                            {"current_study_sha256", cd},
                            {"prior_mask_sha256", res.prior_mask_sha256.empty() ? nlohmann::json()
                                                                                 : nlohmann::json(res.prior_mask_sha256)},
                            {"prior_validated", opt.prior_validated},
                            {"upstream", opt.upstream.empty() ? nlohmann::json() : nlohmann::json(opt.upstream)},
                            {"config_sha256", config_sha},
                            {"checkpoint_sha256", ckpt_sha},
                            {"report_sha256", report_sha},
                            {"current_segments_sha256", current_sha},
                            {"hash", res.provenance_hash}};
  write_file_bytes(res.dir / "provenance.json", prov.dump(2) + "\n");
  write_status(res.dir, "done", revision);
  return res;
}

// Loads the checkpoint first, so a bad one fails before any image work.
inline PairResult run_pair(const fs::path& prior_dir, const fs::path& current_dir, const PipelineConfig& cfg,
                           PairOptions opt = {}) {
  cfg.validate();
  const Models models = load_models(cfg);
  const Study prior = load_study(prior_dir);
  const Study current = load_study(current_dir);
  opt.prior_dir = prior_dir;
  opt.current_dir = current_dir;
  return run_pair(prior, current, cfg, models, opt);
}

// Re-runs a stored job from its recorded inputs, e.g. after landmarks arrive.
inline PairResult resume_pair(const fs::path& work, const std::string& pair_id) {
  require_safe_id(pair_id, "pair");
  const fs::path dir = work / "pairs" / pair_id;
  if (!fs::exists(dir / "job.json")) throw Error("unknown pair " + pair_id);
  const nlohmann::json job = read_json(dir / "job.json");
  if (job["prior"]["dir"].is_null() || job["current"]["dir"].is_null())
    throw Error("pair " + pair_id + " was not run from study directories and cannot be resumed");
  PipelineConfig cfg = load_config(dir / "config.json");
  cfg.output_dir = work;
  PairOptions opt;
  opt.variant = nn::variant_from_string(job.at("variant").get<std::string>());
  opt.prior_validated = job.value("prior_validated", false);
  opt.upstream = job.value("upstream", std::string());
  const Models models = load_models(cfg);
  const Study prior = load_study(job["prior"]["dir"].get<std::string>());
  const Study current = load_study(job["current"]["dir"].get<std::string>());
  if (!job["prior_mask"].is_null())
    opt.prior_mask = to_matrix(load_annotations(dir / "prior_mask.jsonl"), prior.meta.n_slices, prior.meta.oct_width,
                               prior.id);
  opt.prior_dir = job["prior"]["dir"].get<std::string>();
  opt.current_dir = job["current"]["dir"].get<std::string>();
  return run_pair(prior, current, cfg, models, opt);
}

// ----------------------------------------------------------- longitudinal --

struct CascadeStep {
  int index = 0;  // step i pairs S_i with S_{i+1}, from 1
  PairResult result;
};

struct LongitudinalResult {
  std::vector<CascadeStep> steps;
  nlohmann::json timeline;
};

// Step 1 runs the plain variant; step i > 1 runs its prior-mask form with
// LS_i, the lesions computed for S_i in step i - 1, unless a validated prior
// for S_i is stored under <output>/studies/.
inline LongitudinalResult run_longitudinal(const std::vector<Study>& series, const PipelineConfig& cfg,
                                           const Models& models, const std::vector<fs::path>& dirs = {}) {
  cfg.validate();
  if (series.size() < 2) throw Error("longitudinal analysis needs at least two studies");
  if (!dirs.empty() && dirs.size() != series.size()) throw Error("study directories do not match the series");
  for (std::size_t i = 1; i < series.size(); ++i)
    if (!(parse_iso_days(series[i].meta.acquired_at) > parse_iso_days(series[i - 1].meta.acquired_at)))
      throw Error("study dates must be strictly increasing (" + series[i - 1].id + " " +
                  series[i - 1].meta.acquired_at + ", " + series[i].id + " " + series[i].meta.acquired_at + ")");
  pick(models, cfg.variant);
  pick(models, nn::with_prior_mask(cfg.variant));

  LongitudinalResult out;
  nlohmann::json steps = nlohmann::json::array();
  double weighted = 0, years = 0;
  for (std::size_t i = 0; i + 1 < series.size(); ++i) {
    PairOptions opt;
    if (!dirs.empty()) {
      opt.prior_dir = dirs[i];
      opt.current_dir = dirs[i + 1];
    }
    if (i > 0) {
      opt.variant = nn::with_prior_mask(cfg.variant);
      opt.upstream = out.steps.back().result.provenance_hash;
      if (auto v = load_validated(cfg.output_dir, series[i])) {
        opt.prior_mask = std::move(*v);
        opt.prior_validated = true;
      } else {
        opt.prior_mask = out.steps.back().result.detection.current.matrix;
      }
    }
    CascadeStep st{static_cast<int>(i) + 1, run_pair(series[i], series[i + 1], cfg, models, opt)};
    const PairResult& r = st.result;
    steps.push_back({{"step", st.index},
                     {"pair_id", r.pair_id},
                     {"prior_study", series[i].id},
                     {"current_study", series[i + 1].id},
                     {"prior_date", r.report.prior_date},
                     {"current_date", r.report.current_date},
                     {"variant", nn::to_string(r.variant)},
                     {"prior_mask_sha256", r.prior_mask_sha256.empty() ? nlohmann::json() : nlohmann::json(r.prior_mask_sha256)},
                     {"prior_validated", opt.prior_validated},
                     {"provenance", r.provenance_hash},
                     {"report_sha256", sha256_hex(r.report_json)},
                     {"prior_area_mm2", r.report.prior.area_mm2},
                     {"current_area_mm2", r.report.current.area_mm2},
                     {"areal_rate_mm2_per_yr", r.report.areal_rate},
                     {"delta_focality", r.report.delta_focality}});
    weighted += r.report.areal_rate * r.report.elapsed_years;
    years += r.report.elapsed_years;
    out.steps.push_back(std::move(st));
  }
  out.timeline = {{"studies", series.size()},
                  {"steps", steps},
                  {"mean_areal_rate_mm2_per_yr", weighted / years},
                  {"elapsed_years", years}};
  write_file_bytes(cfg.output_dir / "longitudinal.json", out.timeline.dump(2) + "\n");
  return out;
}

inline LongitudinalResult run_longitudinal(const std::vector<fs::path>& dirs, const PipelineConfig& cfg) {
  cfg.validate();
  const Models models = load_models(cfg);
  std::vector<Study> series;
  for (const fs::path& d : dirs) series.push_back(load_study(d));
  return run_longitudinal(series, cfg, models, dirs);
}

}  // namespace octchange
