#pragma once

#include <filesystem>

#include "octchange/evalx/metrics.hpp"
#include "octchange/pipeline/pipeline.hpp"

namespace octchange {

// Scores a finished pair job's current-study output against ground-truth
// segments, inside the job's common FOV.
inline eval::PairMetrics evaluate_job(const fs::path& dir, const SegmentsMatrix& gt, double min_area_mm2 = kMinLesionAreaMm2) {
  const nlohmann::json job = read_json(dir / "job.json");
  const StudyMeta meta = job.at("current").at("meta").get<StudyMeta>();
  const nlohmann::json rep = read_json(dir / "report.json");
  const auto f = rep.at("common_fov");
  const Rect fov{f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>(), f.at(3).get<double>()};
  const SegmentsMatrix pred = to_matrix(load_annotations(dir / "current_segments.jsonl"), meta.n_slices, meta.oct_width);
  if (gt.n_slices() != meta.n_slices || gt.width() != meta.oct_width)
    throw Error("ground truth does not match the current study scan");

  eval::PairEvalInput in;
  in.pair_id = job.at("pair_id").get<std::string>();
  in.variant = job.at("variant").get<std::string>();
  for (int x = 0; x < meta.n_slices; ++x)
    for (int y = 0; y < meta.oct_width; ++y) {
      in.pred_bits.push_back(pred.at(x, y) ? 1 : 0);
      in.gt_bits.push_back(gt.at(x, y) ? 1 : 0);
    }
  in.pred_segments = pred;
  in.gt_segments = gt;
  const Mask region = rect_mask(fov, meta.ir_rows, meta.ir_cols);
  in.px = PixelSize::of(meta);
  in.pred_mask = mask_and(project_to_ir(pred, meta), region);
  in.gt_mask = mask_and(project_to_ir(gt, meta), region);
  in.pred_lesions = filter_lesions(connected_components(in.pred_mask, in.px.area()).lesions, min_area_mm2);
  in.gt_lesions = filter_lesions(connected_components(in.gt_mask, in.px.area()).lesions, min_area_mm2);
  in.region_area_mm2 = static_cast<double>(count_nonzero(region)) * in.px.area();
  return eval::evaluate_pair(in);
}

}  // namespace octchange
