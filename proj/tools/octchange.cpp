// octchange command line: synthetic data, registration, training, inference,
// pair and longitudinal analysis, evaluation and the HTTP service.
//
// Exit codes: 0 success, 2 registration needs manual landmarks, 1 error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "octchange/columns/dataset.hpp"
#include "octchange/nnet/training.hpp"
#include "octchange/pipeline/evaluate.hpp"
#include "octchange/pipeline/serve.hpp"
#include "octchange/studyio/synth.hpp"

using namespace octchange;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kNeedsManual = 2;

// Shared pipeline flags; each overrides the config file when given.
struct ConfigFlags {
  std::string file;
  std::optional<std::string> variant, checkpoint, laterality, out;
  std::optional<int> patch_width, patch_stride, min_segment_len;
  std::optional<double> d_reg, tau_reg, min_area;

  void add(CLI::App* app) {
    app->add_option("--config", file, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--variant", variant, "model variant (M1, M3_M2, M3_M2_P, M3_M1, M3_M1_P, M3, M3_P)");
    app->add_option("--checkpoint", checkpoint, "weight manifest (.json)");
    app->add_option("--patch-width", patch_width);
    app->add_option("--patch-stride", patch_stride);
    app->add_option("--d-reg", d_reg, "RANSAC inlier distance, IR px");
    app->add_option("--tau-reg", tau_reg, "vessel Dice threshold for automatic registration");
    app->add_option("--min-segment-len", min_segment_len);
    app->add_option("--min-area", min_area, "minimum lesion area, mm^2");
    app->add_option("--laterality", laterality, "OD or OS");
    app->add_option("--out", out, "output directory");
  }

  PipelineConfig resolve() const {
    PipelineConfig c = file.empty() ? PipelineConfig{} : load_config(file);
    nlohmann::json o = nlohmann::json::object();
    if (variant) o["variant"] = *variant;
    if (checkpoint) o["checkpoint"] = *checkpoint;
    if (laterality) o["laterality"] = *laterality;
    if (out) o["output_dir"] = *out;
    if (patch_width) o["patch_width"] = *patch_width;
    if (patch_stride) o["patch_stride"] = *patch_stride;
    if (min_segment_len) o["min_segment_len"] = *min_segment_len;
    if (d_reg) o["d_reg"] = *d_reg;
    if (tau_reg) o["tau_reg"] = *tau_reg;
    if (min_area) o["min_area_mm2"] = *min_area;
    merge_config(c, o);
    c.validate();
    return c;
  }
};

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

// ------------------------------------------------------------------ synth --

struct SynthArgs {
  std::uint64_t seed = 1;
  int studies = 2;
  std::string out;
  std::string preset = "full";
  std::optional<int> n_slices, oct_height, oct_width, lesions, confounders;
  std::optional<double> growth, years, ir_noise;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig c = a.preset == "desk" ? desk_config() : SynthConfig{};
  if (a.n_slices) c.n_slices = *a.n_slices;
  if (a.oct_height) c.oct_height = *a.oct_height;
  if (a.oct_width) c.oct_width = *a.oct_width;
  if (a.lesions) c.lesion_count = *a.lesions;
  if (a.confounders) c.confounder_count = *a.confounders;
  if (a.growth) c.growth_factor = *a.growth;
  if (a.years) c.years_between = *a.years;
  if (a.ir_noise) c.ir_noise = *a.ir_noise;
  auto [studies, truth] = synth_series(a.seed, c, a.studies);
  const fs::path out = a.out;
  nlohmann::json steps = nlohmann::json::array();
  for (const RigidTransform2D& t : truth.step_transforms)
    steps.push_back({{"theta_deg", rad_to_deg(t.theta)}, {"t_px", {t.t.x, t.t.y}}});
  nlohmann::json tj{{"seed", a.seed}, {"growth_factor", truth.growth_factor}, {"step_transforms", steps},
                    {"studies", nlohmann::json::array()}};
  for (std::size_t k = 0; k < studies.size(); ++k) {
    const Study& s = studies[k];
    save_study(s, out / s.id);
    save_annotations(to_annotations(truth.masks[k]), out / "truth" / (s.id + "_segments.jsonl"));
    save_annotations(to_annotations(truth.confounder_masks[k]), out / "truth" / (s.id + "_confounders.jsonl"));
    tj["studies"].push_back({{"id", s.id}, {"date", s.meta.acquired_at}, {"atrophy_columns", truth.masks[k].count()}});
  }
  write_file_bytes(out / "truth" / "truth.json", tj.dump(2) + "\n");
  std::printf("wrote %d studies to %s\n", a.studies, out.string().c_str());
  return kOk;
}

// --------------------------------------------------------------- register --

int cmd_register(const std::string& prior_dir, const std::string& current_dir, const std::string& landmarks,
                 const std::string& out, double d_reg, double tau_reg) {
  const Study prior = load_study(prior_dir), current = load_study(current_dir);
  RegistrationConfig rc;
  rc.ransac.d_reg = d_reg;
  rc.tau_reg = tau_reg;
  const VesselMaps vm = vessel_maps(prior, current, rc);
  RegistrationResult r;
  if (!landmarks.empty()) {
    const auto lm = landmarks_from_string(read_file_bytes(landmarks));
    validate_landmarks(lm);
    r = register_manual(vm, lm, tau_reg);
  } else {
    r = register_auto(vm, rc);
  }
  const std::string text = to_json(r).dump(2) + "\n";
  if (!out.empty()) write_file_bytes(out, text);
  std::cout << text;
  return r.status == RegStatus::needs_manual ? kNeedsManual : kOk;
}

// ------------------------------------------------------------------ train --

struct TrainArgs {
  std::vector<std::string> series;
  std::string out;
  int epochs = 1000, patience = 50, folds = 4, batch = 100;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t max_positives = 400;
  double negative_ratio = 4.0, hard_fraction = 0.0;
  int patch_width = 7;
  std::vector<std::string> variants;
};

// A series directory holds studies S1..Sn and truth/<id>_segments.jsonl.
int cmd_train(const TrainArgs& a) {
  PatchConfig pc;
  pc.w = a.patch_width;
  pc.validate();
  SamplingConfig sc;
  sc.max_positives = a.max_positives;
  sc.negative_ratio = a.negative_ratio;
  sc.hard_fraction = a.hard_fraction;
  std::vector<ColumnPairSample> d2;
  std::uint64_t pair_seed = a.seed;
  for (const std::string& dir : a.series) {
    std::vector<Study> studies;
    for (int k = 1; fs::exists(fs::path(dir) / ("S" + std::to_string(k))); ++k)
      studies.push_back(load_study(fs::path(dir) / ("S" + std::to_string(k))));
    if (studies.size() < 2) throw Error("series " + dir + " has fewer than two studies");
    auto truth = [&](const Study& s, const char* kind) -> std::optional<SegmentsMatrix> {
      const fs::path p = fs::path(dir) / "truth" / (s.id + "_" + kind + ".jsonl");
      if (!fs::exists(p)) return std::nullopt;
      return to_matrix(load_annotations(p), s.meta.n_slices, s.meta.oct_width, s.id);
    };
    for (std::size_t i = 0; i + 1 < studies.size(); ++i) {
      const auto lp = truth(studies[i], "segments"), lc = truth(studies[i + 1], "segments");
      if (!lp || !lc) throw Error("series " + dir + " lacks ground-truth segments");
      const auto hard = truth(studies[i + 1], "confounders");
      const RegistrationResult reg = register_studies(studies[i], studies[i + 1]);
      if (reg.status == RegStatus::needs_manual) {
        warn("skipping " + dir + " " + studies[i].id + "->" + studies[i + 1].id + ": registration needs landmarks");
        continue;
      }
      const auto dp = denoise(studies[i]), dc = denoise(studies[i + 1]);
      auto v = training_pairs(dp, dc, reg, pc, {&*lp, &*lc}, &*lp, sc, pair_seed++, hard ? &*hard : nullptr);
      d2.insert(d2.end(), v.begin(), v.end());
    }
  }
  std::printf("%zu training samples\n", d2.size());
  nn::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.patience = a.patience;
  tc.folds = a.folds;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.seed = a.seed;
  if (!a.variants.empty()) {
    tc.variants.clear();
    for (const auto& v : a.variants) tc.variants.push_back(nn::variant_from_string(v));
  }
  tc.log = [](const std::string& s) { std::printf("%s\n", s.c_str()); };
  const nn::TrainedSet set = nn::train_staged(current_singles(d2), d2, tc);
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : set.folds) {
    nlohmann::json vf = nlohmann::json::object();
    for (const auto& [v, x] : f.val_f1) vf[nn::to_string(v)] = x;
    folds.push_back({{"fold", f.fold}, {"n1_sha256", f.n1_digest}, {"n2_sha256", f.n2_digest}, {"val_f1", vf}});
  }
  const fs::path manifest =
      nn::save_checkpoint(set.classifiers, a.out, {{"samples", d2.size()}, {"seed", a.seed}, {"folds", folds}});
  std::printf("wrote %s\n", manifest.string().c_str());
  return kOk;
}

// ------------------------------------------------------------------ infer --

int cmd_infer(const std::string& prior_dir, const std::string& current_dir, const std::string& prior_mask,
              const ConfigFlags& flags) {
  const PipelineConfig cfg = flags.resolve();
  const Models models = load_models(cfg);
  const Study prior = load_study(prior_dir), current = load_study(current_dir);
  const RegistrationResult reg = register_studies(prior, current, cfg.registration());
  if (reg.status == RegStatus::needs_manual) {
    std::cerr << "registration needs manual landmarks (vessel Dice " << reg.vessel_overlap << ")\n";
    return kNeedsManual;
  }
  std::optional<SegmentsMatrix> mask;
  if (!prior_mask.empty())
    mask = to_matrix(load_annotations(prior_mask), prior.meta.n_slices, prior.meta.oct_width, prior.id);
  const Detection d = detect(pick(models, cfg.variant), denoise(prior), denoise(current), reg, cfg.patch,
                             cfg.min_segment_len, mask ? &*mask : nullptr);
  write_config(cfg, cfg.output_dir);
  save_annotations(to_annotations(d.prior.matrix), cfg.output_dir / (prior.id + "_segments.jsonl"));
  save_annotations(to_annotations(d.current.matrix), cfg.output_dir / (current.id + "_segments.jsonl"));
  write_file_bytes(cfg.output_dir / "registration.json", to_json(reg).dump(2) + "\n");
  std::printf("%s: %zu atrophy columns, %s: %zu atrophy columns\n", prior.id.c_str(), d.prior.matrix.count(),
              current.id.c_str(), d.current.matrix.count());
  return kOk;
}

// ---------------------------------------------------------------- analyze --

int cmd_analyze(const std::string& prior_dir, const std::string& current_dir, const std::string& prior_mask,
                const ConfigFlags& flags) {
  const PipelineConfig cfg = flags.resolve();
  PairOptions opt;
  if (!prior_mask.empty()) {
    const StudyMeta m = load_study(prior_dir).meta;
    opt.prior_mask = to_matrix(load_annotations(prior_mask), m.n_slices, m.oct_width);
    opt.variant = nn::with_prior_mask(cfg.variant);
  }
  const PairResult r = run_pair(prior_dir, current_dir, cfg, opt);
  std::cout << report_text(r.report);
  std::printf("artifacts: %s\n", r.dir.string().c_str());
  return kOk;
}

// ----------------------------------------------------------------- report --

// Report from given segmentations, e.g. ground truth or manual annotations.
int cmd_report(const std::string& prior_dir, const std::string& current_dir, const std::string& prior_seg,
               const std::string& current_seg, const std::string& registration, const std::string& out,
               const ConfigFlags& flags) {
  const PipelineConfig cfg = flags.resolve();
  const Study prior = load_study(prior_dir), current = load_study(current_dir);
  const RegistrationResult reg = registration.empty() ? register_studies(prior, current, cfg.registration())
                                                      : registration_from_json(read_json(registration));
  if (reg.status == RegStatus::needs_manual) {
    std::cerr << "registration needs manual landmarks\n";
    return kNeedsManual;
  }
  const auto pm = to_matrix(load_annotations(prior_seg), prior.meta.n_slices, prior.meta.oct_width, prior.id);
  const auto cm = to_matrix(load_annotations(current_seg), current.meta.n_slices, current.meta.oct_width, current.id);
  const ProgressionReport rep = build_report({prior.id, prior.meta, project_to_ir(pm, prior.meta)},
                                             {current.id, current.meta, project_to_ir(cm, current.meta)},
                                             reg.transform, cfg.measurement());
  if (!out.empty()) {
    write_file_bytes(fs::path(out) / "report.json", to_json(rep).dump(2) + "\n");
    write_file_bytes(fs::path(out) / "report.txt", report_text(rep));
    write_file_bytes(fs::path(out) / "report.csv", report_csv_header() + "\n" + report_csv_row(rep) + "\n");
    write_config(cfg, out);
  }
  std::cout << report_text(rep);
  return kOk;
}

// ------------------------------------------------------------------- eval --

int cmd_eval(const std::vector<std::string>& jobs, const std::vector<std::string>& truths, const std::string& csv,
             double min_area) {
  if (jobs.size() != truths.size()) throw Error("eval: give one --truth per --job");
  std::string rows = eval::metrics_csv_header() + "\n";
  nlohmann::json all = nlohmann::json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const nlohmann::json job = read_json(fs::path(jobs[i]) / "job.json");
    const StudyMeta m = job.at("current").at("meta").get<StudyMeta>();
    const SegmentsMatrix gt = to_matrix(load_annotations(truths[i]), m.n_slices, m.oct_width);
    const eval::PairMetrics pm = evaluate_job(jobs[i], gt, min_area);
    all.push_back(eval::to_json(pm));
    rows += eval::metrics_csv_row(pm) + "\n";
  }
  if (!csv.empty()) write_file_bytes(csv, rows);
  print_json(all);
  return kOk;
}

// ------------------------------------------------------------ longitudinal --

int cmd_longitudinal(const std::vector<std::string>& dirs, const ConfigFlags& flags) {
  const PipelineConfig cfg = flags.resolve();
  std::vector<fs::path> ps(dirs.begin(), dirs.end());
  const LongitudinalResult r = run_longitudinal(ps, cfg);
  print_json(r.timeline);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OCT retinal atrophy change analysis"};
  app.require_subcommand(1);
  int rc = kOk;

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic study series with ground truth");
  synth->add_option("--seed", sa.seed);
  synth->add_option("--studies", sa.studies)->check(CLI::PositiveNumber);
  synth->add_option("--out", sa.out)->required();
  synth->add_option("--preset", sa.preset)->check(CLI::IsMember({"full", "desk"}));
  synth->add_option("--n-slices", sa.n_slices);
  synth->add_option("--oct-height", sa.oct_height);
  synth->add_option("--oct-width", sa.oct_width);
  synth->add_option("--lesions", sa.lesions);
  synth->add_option("--confounders", sa.confounders);
  synth->add_option("--growth", sa.growth, "atrophy area ratio between consecutive studies");
  synth->add_option("--years", sa.years, "years between studies");
  synth->add_option("--ir-noise", sa.ir_noise);
  synth->callback([&] { rc = cmd_synth(sa); });

  std::string prior, current, landmarks, reg_out;
  double d_reg = 3.0, tau_reg = 0.5;
  auto* reg = app.add_subcommand("register", "Register two studies' IR images");
  reg->add_option("--prior", prior)->required()->check(CLI::ExistingDirectory);
  reg->add_option("--current", current)->required()->check(CLI::ExistingDirectory);
  reg->add_option("--landmarks", landmarks, "landmark pairs (JSONL); skips automatic registration")
      ->check(CLI::ExistingFile);
  reg->add_option("--out", reg_out, "registration JSON output");
  reg->add_option("--d-reg", d_reg);
  reg->add_option("--tau-reg", tau_reg);
  reg->callback([&] { rc = cmd_register(prior, current, landmarks, reg_out, d_reg, tau_reg); });

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Staged training on annotated study series");
  train->add_option("--series", ta.series, "series directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "checkpoint stem")->required();
  train->add_option("--epochs", ta.epochs);
  train->add_option("--patience", ta.patience);
  train->add_option("--folds", ta.folds);
  train->add_option("--batch", ta.batch);
  train->add_option("--lr", ta.lr);
  train->add_option("--seed", ta.seed);
  train->add_option("--max-positives", ta.max_positives);
  train->add_option("--negative-ratio", ta.negative_ratio);
  train->add_option("--hard-fraction", ta.hard_fraction);
  train->add_option("--patch-width", ta.patch_width);
  train->add_option("--variant", ta.variants, "variants to train (repeatable; default all)");
  train->callback([&] { rc = cmd_train(ta); });

  ConfigFlags cf_infer, cf_analyze, cf_report, cf_long;
  std::string prior_mask;
  auto* infer = app.add_subcommand("infer", "Detect atrophy columns in a study pair");
  infer->add_option("--prior", prior)->required()->check(CLI::ExistingDirectory);
  infer->add_option("--current", current)->required()->check(CLI::ExistingDirectory);
  infer->add_option("--prior-mask", prior_mask, "prior segments (JSONL) for prior-mask variants")
      ->check(CLI::ExistingFile);
  cf_infer.add(infer);
  infer->callback([&] { rc = cmd_infer(prior, current, prior_mask, cf_infer); });

  auto* analyze = app.add_subcommand("analyze", "Full pair pipeline: register, detect, measure, report");
  analyze->add_option("--prior", prior)->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--current", current)->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--prior-mask", prior_mask, "prior segments (JSONL); runs the prior-mask variant")
      ->check(CLI::ExistingFile);
  cf_analyze.add(analyze);
  analyze->callback([&] { rc = cmd_analyze(prior, current, prior_mask, cf_analyze); });

  std::string prior_seg, current_seg, registration, report_out;
  auto* report = app.add_subcommand("report", "Progression report from given segmentations");
  report->add_option("--prior", prior)->required()->check(CLI::ExistingDirectory);
  report->add_option("--current", current)->required()->check(CLI::ExistingDirectory);
  report->add_option("--prior-segments", prior_seg)->required()->check(CLI::ExistingFile);
  report->add_option("--current-segments", current_seg)->required()->check(CLI::ExistingFile);
  report->add_option("--registration", registration, "registration JSON; registers when absent")
      ->check(CLI::ExistingFile);
  report->add_option("--report-dir", report_out, "write report.json/.txt/.csv here");
  cf_report.add(report);
  report->callback([&] { rc = cmd_report(prior, current, prior_seg, current_seg, registration, report_out, cf_report); });

  std::vector<std::string> jobs, truths;
  std::string csv;
  double min_area = kMinLesionAreaMm2;
  auto* ev = app.add_subcommand("eval", "Score pair jobs against ground-truth current segments");
  ev->add_option("--job", jobs, "pair job directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--truth", truths, "ground-truth segments per job (repeatable)")->required()->check(CLI::ExistingFile);
  ev->add_option("--csv", csv, "aggregate CSV output");
  ev->add_option("--min-area", min_area);
  ev->callback([&] { rc = cmd_eval(jobs, truths, csv, min_area); });

  std::vector<std::string> series;
  auto* lon = app.add_subcommand("longitudinal", "Cascaded analysis of a dated study series");
  lon->add_option("--studies", series, "study directories in date order")->required()->expected(2, -1)
      ->check(CLI::ExistingDirectory);
  cf_long.add(lon);
  lon->callback([&] { rc = cmd_longitudinal(series, cf_long); });

  std::string work = "work", host = "127.0.0.1";
  int port = 8080;
  auto* srv = app.add_subcommand("serve", "HTTP service for the viewer");
  srv->add_option("--work", work, "job store directory");
  srv->add_option("--host", host);
  srv->add_option("--port", port);
  srv->callback([&] {
    std::printf("serving %s on http://%s:%d\n", work.c_str(), host.c_str(), port);
    std::fflush(stdout);
    serve(work, host, port);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kError;
  } catch (const NeedsManualRegistration& e) {
    std::cerr << e.what() << "\n";
    return kNeedsManual;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return rc;
}
