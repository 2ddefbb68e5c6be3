#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/core/filters.hpp"
#include "octchange/core/image.hpp"
#include "octchange/core/png_io.hpp"
#include "octchange/studyio/meta.hpp"

namespace octchange {

// One OCT acquisition: IR fundus image plus the B-scan stack, intensities in [0, 1].
struct Study {
  std::string id;
  StudyMeta meta;
  ImageD ir;
  std::vector<ImageD> slices;
};

inline void validate(const Study& s) {
  validate(s.meta);
  if (s.ir.rows() != s.meta.ir_rows || s.ir.cols() != s.meta.ir_cols) throw Error("dimension mismatch in IR image");
  if (static_cast<int>(s.slices.size()) != s.meta.n_slices) {
    if (s.slices.empty()) throw Error("empty scan");
    throw Error("slice count mismatch: metadata says " + std::to_string(s.meta.n_slices) + ", found " +
                std::to_string(s.slices.size()));
  }
  for (std::size_t k = 0; k < s.slices.size(); ++k) {
    if (s.slices[k].rows() != s.meta.oct_height || s.slices[k].cols() != s.meta.oct_width)
      throw Error("dimension mismatch at slice " + std::to_string(k));
  }
}

inline std::string slice_filename(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d.png", k);
  return buf;
}

// Study bundle layout: meta.json, ir.png, oct/NNN.png.
inline Study load_study(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("missing study directory: " + dir.string());
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw Error("missing file: " + meta_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("meta.json: " + std::string(e.what()));
  }
  Study s;
  s.id = dir.filename().string();
  if (s.id.empty()) s.id = dir.parent_path().filename().string();
  s.meta = j.get<StudyMeta>();
  validate(s.meta);
  s.ir = png::read_gray(dir / "ir.png");
  for (int k = 0; k < s.meta.n_slices; ++k) {
    const fs::path p = dir / "oct" / slice_filename(k);
    if (!fs::exists(p)) throw Error("missing file: " + p.string());
    s.slices.push_back(png::read_gray(p));
  }
  validate(s);
  return s;
}

inline void save_study(const Study& s, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  validate(s);
  fs::create_directories(dir / "oct");
  {
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "meta.json").string());
    out << nlohmann::json(s.meta).dump(2) << '\n';
  }
  png::write_gray16(dir / "ir.png", s.ir);
  for (std::size_t k = 0; k < s.slices.size(); ++k)
    png::write_gray16(dir / "oct" / slice_filename(static_cast<int>(k)), s.slices[k]);
}

// Resamples the IR image and IR-plane metadata of `s` onto a grid with the
// given pixel size, so two studies with different IR resolutions share one
// pixel grid before rigid registration. OCT slices are untouched.
inline Study resample_ir_grid(const Study& s, double target_px_h_um, double target_px_w_um) {
  if (s.meta.ir_px_h_um == target_px_h_um && s.meta.ir_px_w_um == target_px_w_um) return s;
  const double fh = s.meta.ir_px_h_um / target_px_h_um;
  const double fw = s.meta.ir_px_w_um / target_px_w_um;
  Study out = s;
  out.meta.ir_rows = static_cast<int>(std::lround(s.meta.ir_rows * fh));
  out.meta.ir_cols = static_cast<int>(std::lround(s.meta.ir_cols * fw));
  out.meta.ir_px_h_um = target_px_h_um;
  out.meta.ir_px_w_um = target_px_w_um;
  out.meta.fov_origin = {s.meta.fov_origin.x * fh, s.meta.fov_origin.y * fw};
  out.meta.fov_extent = {s.meta.fov_extent.x * fh, s.meta.fov_extent.y * fw};
  out.meta.fovea = {s.meta.fovea.x * fh, s.meta.fovea.y * fw};
  // Keep the rescaled FOV inside the rounded image.
  out.meta.fov_extent.x = std::min(out.meta.fov_extent.x, out.meta.ir_rows - out.meta.fov_origin.x);
  out.meta.fov_extent.y = std::min(out.meta.fov_extent.y, out.meta.ir_cols - out.meta.fov_origin.y);
  out.ir = ImageD(out.meta.ir_rows, out.meta.ir_cols);
  for (int r = 0; r < out.ir.rows(); ++r)
    for (int c = 0; c < out.ir.cols(); ++c)
      out.ir(r, c) = filters::bilinear(s.ir, (r + 0.5) / fh - 0.5, (c + 0.5) / fw - 0.5);
  return out;
}

}  // namespace octchange
