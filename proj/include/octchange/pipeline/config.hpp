#pragma once

#include <algorithm>
#include <filesystem>
#include <iterator>
#include <string>

#include <nlohmann/json.hpp>

#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"
#include "octchange/core/hash.hpp"
#include "octchange/lesions/lesions.hpp"
#include "octchange/measure/measure.hpp"
#include "octchange/nnet/networks.hpp"
#include "octchange/registration/register.hpp"

namespace octchange {

struct PipelineConfig {
  nn::Variant variant = nn::Variant::M3;  // cascade steps after the first use its prior-mask form
  std::filesystem::path checkpoint;
  PatchConfig patch;
  double d_reg = 3.0;   // RANSAC inlier distance, IR px
  double tau_reg = 0.5;  // vessel Dice below which registration needs landmarks
  int min_segment_len = 3;
  double min_area_mm2 = kMinLesionAreaMm2;
  Eye eye = Eye::right;
  std::filesystem::path output_dir = "work";

  // Thresholds only; file checks happen where files are opened.
  void validate() const {
    patch.validate();
    if (!(d_reg > 0)) throw Error("config: d_reg must be positive");
    if (!(tau_reg >= 0 && tau_reg <= 1)) throw Error("config: tau_reg must lie in [0, 1]");
    if (min_segment_len < 1) throw Error("config: min_segment_len must be >= 1");
    if (!(min_area_mm2 >= 0)) throw Error("config: min_area_mm2 must be >= 0");
    if (output_dir.empty()) throw Error("config: output directory is empty");
  }

  void require_checkpoint() const {
    if (checkpoint.empty()) throw Error("config: no checkpoint given");
    if (!std::filesystem::exists(checkpoint)) throw Error("config: checkpoint not found: " + checkpoint.string());
  }

  RegistrationConfig registration() const {
    RegistrationConfig r;
    r.ransac.d_reg = d_reg;
    r.tau_reg = tau_reg;
    return r;
  }

  MeasureConfig measurement() const {
    MeasureConfig m;
    m.eye = eye;
    m.min_area_mm2 = min_area_mm2;
    return m;
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"variant", nn::to_string(c.variant)},
          {"checkpoint", c.checkpoint.string()},
          {"patch_width", c.patch.w},
          {"patch_stride", c.patch.s},
          {"d_reg", c.d_reg},
          {"tau_reg", c.tau_reg},
          {"min_segment_len", c.min_segment_len},
          {"min_area_mm2", c.min_area_mm2},
          {"laterality", to_string(c.eye)},
          {"output_dir", c.output_dir.string()}};
}

// Keys absent from `j` keep the values already in `c`.
inline void merge_config(PipelineConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw Error("config: expected a JSON object");
  static const char* known[] = {"variant",  "checkpoint",      "patch_width",  "patch_stride", "d_reg",
                                "tau_reg",  "min_segment_len", "min_area_mm2", "laterality",   "output_dir"};
  for (const auto& [k, v] : j.items())
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) throw Error("config: unknown key " + k);
  try {
    if (j.contains("variant")) c.variant = nn::variant_from_string(j["variant"].get<std::string>());
    if (j.contains("checkpoint")) c.checkpoint = j["checkpoint"].get<std::string>();
    if (j.contains("patch_width")) c.patch.w = j["patch_width"].get<int>();
    if (j.contains("patch_stride")) c.patch.s = j["patch_stride"].get<int>();
    if (j.contains("d_reg")) c.d_reg = j["d_reg"].get<double>();
    if (j.contains("tau_reg")) c.tau_reg = j["tau_reg"].get<double>();
    if (j.contains("min_segment_len")) c.min_segment_len = j["min_segment_len"].get<int>();
    if (j.contains("min_area_mm2")) c.min_area_mm2 = j["min_area_mm2"].get<double>();
    if (j.contains("laterality")) c.eye = eye_from_string(j["laterality"].get<std::string>());
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
}

inline PipelineConfig load_config(const std::filesystem::path& p) {
  PipelineConfig c;
  try {
    merge_config(c, nlohmann::json::parse(read_file_bytes(p)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config " + p.string() + ": " + e.what());
  }
  return c;
}

inline void write_config(const PipelineConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_bytes(dir / "config.json", to_json(c).dump(2) + "\n");
}

}  // namespace octchange
