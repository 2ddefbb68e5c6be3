#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/lesions/segments.hpp"

namespace octchange {

struct Interval {
  int left = 0;
  int right = 0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Per-slice atrophy column intervals. A slice present with an empty interval
// list is an explicit "no atrophy here" record and is preserved on round-trip.
struct AnnotationSet {
  std::string label = "cRORA";
  std::map<int, std::vector<Interval>> slices;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

inline void validate(const AnnotationSet& a, int width = -1) {
  for (const auto& [k, ivs] : a.slices) {
    if (k < 0) throw Error("negative slice index " + std::to_string(k));
    int prev_right = -1;
    for (const Interval& iv : ivs) {
      if (iv.left > iv.right)
        throw Error("malformed interval [" + std::to_string(iv.left) + ", " + std::to_string(iv.right) +
                    "] on slice " + std::to_string(k));
      if (iv.left < 0 || (width > 0 && iv.right >= width))
        throw Error("interval outside slice width on slice " + std::to_string(k));
      if (iv.left <= prev_right) throw Error("overlapping intervals on slice " + std::to_string(k));
      prev_right = iv.right;
    }
  }
}

// Newline-delimited records: {"slice": k, "intervals": [[l, r], ...]}. A
// non-default label schema is carried as an extra "label" key.
inline std::string annotations_to_string(const AnnotationSet& a) {
  validate(a);
  std::string out;
  for (const auto& [k, ivs] : a.slices) {
    nlohmann::json rec;
    rec["slice"] = k;
    rec["intervals"] = nlohmann::json::array();
    for (const Interval& iv : ivs) rec["intervals"].push_back({iv.left, iv.right});
    if (a.label != "cRORA") rec["label"] = a.label;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

inline AnnotationSet annotations_from_string(const std::string& text) {
  AnnotationSet a;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      const int k = rec.at("slice").get<int>();
      std::vector<Interval> ivs;
      for (const auto& p : rec.at("intervals")) ivs.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
      if (rec.contains("label")) a.label = rec["label"].get<std::string>();
      auto& dst = a.slices[k];
      dst.insert(dst.end(), ivs.begin(), ivs.end());
    } catch (const nlohmann::json::exception& e) {
      throw Error("annotation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate(a);
  return a;
}

inline void save_annotations(const AnnotationSet& a, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << annotations_to_string(a);
}

inline AnnotationSet load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return annotations_from_string(ss.str());
}

// Every slice gets a record, so empty slices round-trip as explicit records.
inline AnnotationSet to_annotations(const SegmentsMatrix& m) {
  AnnotationSet a;
  for (int s = 0; s < m.n_slices(); ++s) a.slices[s];
  for (const Segment& seg : segments_of(m)) a.slices[seg.slice].push_back({seg.left, seg.right});
  return a;
}

inline SegmentsMatrix to_matrix(const AnnotationSet& a, int n_slices, int width, std::string study_id = {}) {
  validate(a, width);
  SegmentsMatrix m(n_slices, width, std::move(study_id));
  for (const auto& [k, ivs] : a.slices) {
    if (k >= n_slices) throw Error("annotation slice " + std::to_string(k) + " beyond scan");
    for (const Interval& iv : ivs)
      for (int c = iv.left; c <= iv.right; ++c) m.set(k, c);
  }
  return m;
}

}  // namespace octchange
