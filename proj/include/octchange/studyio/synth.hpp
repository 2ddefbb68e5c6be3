#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/geometry.hpp"
#include "octchange/core/image.hpp"
#include "octchange/core/png_io.hpp"
#include "octchange/lesions/segments.hpp"
#include "octchange/registration/column_map.hpp"
#include "octchange/studyio/study.hpp"

namespace octchange {

// Parameters of the synthetic study generator. Geometry defaults follow a
// 496×496 IR image at 20 µm with a 49-slice stack (slice spacing 7 IR px).
struct SynthConfig {
  int ir_size = 496;
  double ir_px_um = 20.0;
  Vec2 fov_origin{76.0, 98.0};
  Vec2 fov_extent{343.0, 300.0};
  int n_slices = 49;
  int oct_height = 496;
  int oct_width = 1024;
  double oct_px_z_um = 4.0;

  int vessel_count = 16;
  double vessel_width_min = 2.0;
  double vessel_width_max = 5.0;
  double vessel_contrast = 0.5;

  int lesion_count = 3;
  double lesion_radius_min = 16.0;  // semi-axis range of the first study, IR px
  double lesion_radius_max = 30.0;
  double growth_factor = 2.0;       // atrophy area ratio between consecutive studies

  double max_rotation_deg = 5.0;
  double max_translation_px = 20.0;

  double ir_noise = 0.0;     // Gaussian σ added to IR intensities
  double oct_noise = 0.03;   // Gaussian σ added to OCT intensities
  double precursor_strength = 0.35;  // RPE weakening of columns that turn atrophic in the next study
  int confounder_count = 0;          // atrophy-like unlabeled blobs in every non-first study

  std::string first_date = "2020-01-01";
  double years_between = 2.0;
};

// Ground truth of a synthetic series of n studies.
struct SeriesTruth {
  std::vector<RigidTransform2D> world_to_study;   // A_k: first-study IR frame -> study k IR frame
  std::vector<RigidTransform2D> step_transforms;  // T_IR between studies k and k+1
  std::vector<SegmentsMatrix> masks;
  std::vector<SegmentsMatrix> confounder_masks;  // unlabeled atrophy-like columns
  std::vector<Mask> vessel_masks;
  std::vector<double> lesion_scales;
  double growth_factor = 1.0;
};

struct SyntheticTruth {
  RigidTransform2D true_transform;
  SegmentsMatrix prior_mask;
  SegmentsMatrix current_mask;
  SegmentsMatrix current_confounders;
  std::array<Mask, 2> vessel_masks;
  double growth_factor = 1.0;
};

struct SynthPair {
  Study prior;
  Study current;
  SyntheticTruth truth;
};

namespace synth_detail {

struct Ellipse {
  Vec2 c;
  double a = 1, b = 1, phi = 0;
  bool contains(Vec2 p, double scale) const {
    const Vec2 d = p - c;
    const double cs = std::cos(phi), sn = std::sin(phi);
    const double u = (cs * d.x + sn * d.y) / (a * scale);
    const double v = (-sn * d.x + cs * d.y) / (b * scale);
    return u * u + v * v <= 1.0;
  }
  Vec2 boundary(double t, double scale) const {
    const double cs = std::cos(phi), sn = std::sin(phi);
    const double u = a * scale * std::cos(t), v = b * scale * std::sin(t);
    return {c.x + cs * u - sn * v, c.y + sn * u + cs * v};
  }
};

struct Vessel {
  std::vector<Vec2> pts;  // polyline in the world frame
  double width = 3.0;
  double contrast = 0.4;
};

enum class ColumnKind : std::uint8_t { healthy, atrophy, precursor, confounder };

inline double quantized(double v) { return png::quantize16(v) / 65535.0; }

inline double seg_dist2(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double L2 = dot(ab, ab);
  double t = L2 > 0 ? dot(p - a, ab) / L2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 q = a + t * ab;
  const Vec2 d = p - q;
  return dot(d, d);
}

class Generator {
 public:
  Generator(std::uint64_t seed, const SynthConfig& cfg) : cfg_(cfg), rng_(seed) {}

  double uni(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double gauss(double s) { return std::normal_distribution<double>(0.0, s)(rng_); }
  std::mt19937_64& rng() { return rng_; }

  StudyMeta meta(int k) const {
    StudyMeta m;
    m.n_slices = cfg_.n_slices;
    m.oct_height = cfg_.oct_height;
    m.oct_width = cfg_.oct_width;
    m.oct_px_z_um = cfg_.oct_px_z_um;
    m.oct_px_y_um = cfg_.fov_extent.y * cfg_.ir_px_um / cfg_.oct_width;
    m.ir_rows = m.ir_cols = cfg_.ir_size;
    m.ir_px_h_um = m.ir_px_w_um = cfg_.ir_px_um;
    m.fov_origin = cfg_.fov_origin;
    m.fov_extent = cfg_.fov_extent;
    m.acquired_at = format_iso_days(parse_iso_days(cfg_.first_date) + k * cfg_.years_between * 365.25);
    return m;
  }

  std::vector<Vessel> make_vessels() {
    std::vector<Vessel> out;
    const double S = cfg_.ir_size;
    for (int i = 0; i < cfg_.vessel_count; ++i) {
      // Cubic Bézier from one border band to another, bending through the interior.
      auto edge_point = [&](int side) -> Vec2 {
        const double t = uni(0.05 * S, 0.95 * S);
        switch (side) {
          case 0: return {uni(-0.05 * S, 0.1 * S), t};
          case 1: return {uni(0.9 * S, 1.05 * S), t};
          case 2: return {t, uni(-0.05 * S, 0.1 * S)};
          default: return {t, uni(0.9 * S, 1.05 * S)};
        }
      };
      const int s0 = static_cast<int>(uni(0, 4));
      const int s1 = (s0 + 1 + static_cast<int>(uni(0, 3))) % 4;
      const Vec2 p0 = edge_point(s0), p3 = edge_point(s1);
      const Vec2 p1{uni(0.1 * S, 0.9 * S), uni(0.1 * S, 0.9 * S)};
      const Vec2 p2{uni(0.1 * S, 0.9 * S), uni(0.1 * S, 0.9 * S)};
      Vessel v;
      v.width = uni(cfg_.vessel_width_min, cfg_.vessel_width_max);
      v.contrast = cfg_.vessel_contrast * (0.6 + 0.4 * (v.width - cfg_.vessel_width_min) /
                                                       std::max(1e-9, cfg_.vessel_width_max - cfg_.vessel_width_min));
      const double approx_len = norm(p1 - p0) + norm(p2 - p1) + norm(p3 - p2);
      const int n = std::max(8, static_cast<int>(approx_len / 0.75));
      for (int j = 0; j <= n; ++j) {
        const double t = static_cast<double>(j) / n, u = 1 - t;
        const Vec2 p = (u * u * u) * p0 + (3 * u * u * t) * p1 + (3 * u * t * t) * p2 + (t * t * t) * p3;
        v.pts.push_back(p);
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  // Renders the IR image of a study whose anatomy is the world mapped by A.
  void render_ir(const std::vector<Vessel>& vessels, const RigidTransform2D& A, ImageD& ir, Mask& vmask) {
    const int S = cfg_.ir_size;
    ir = ImageD(S, S);
    vmask = Mask(S, S, 0);
    const double cx = S / 2.0, cy = S / 2.0;
    for (int r = 0; r < S; ++r)
      for (int c = 0; c < S; ++c) {
        const double d2 = ((r - cx) * (r - cx) + (c - cy) * (c - cy)) / (S * S * 0.5);
        ir(r, c) = 0.72 - 0.18 * d2;
      }
    ImageD dark(S, S, 1.0);
    for (const Vessel& v : vessels) {
      std::vector<Vec2> pts;
      pts.reserve(v.pts.size());
      for (const Vec2& p : v.pts) pts.push_back(A(p));
      const double sigma = v.width / 2.3548;
      const double reach = std::max(v.width, 3.5 * sigma) + 1.0;
      Image<double> best(S, S, 1e30);
      for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
        const Vec2 a = pts[j], b = pts[j + 1];
        const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - reach)));
        const int r1 = std::min(S - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + reach)));
        const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - reach)));
        const int c1 = std::min(S - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + reach)));
        for (int r = r0; r <= r1; ++r)
          for (int c = c0; c <= c1; ++c) {
            const double d2 = seg_dist2({r + 0.0, c + 0.0}, a, b);
            if (d2 < best(r, c)) best(r, c) = d2;
          }
      }
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
          const double d2 = best(r, c);
          if (d2 > reach * reach) continue;
          dark(r, c) *= 1.0 - v.contrast * std::exp(-0.5 * d2 / (sigma * sigma));
          if (d2 <= 0.25 * v.width * v.width) vmask(r, c) = 1;
        }
    }
    for (int r = 0; r < S; ++r)
      for (int c = 0; c < S; ++c) {
        double v = ir(r, c) * dark(r, c);
        if (cfg_.ir_noise > 0) v += gauss(cfg_.ir_noise);
        ir(r, c) = quantized(std::clamp(v, 0.0, 1.0));
      }
  }

  // Retinal layer depths as smooth functions of the world position.
  struct Layers {
    double ilm, rpe;
  };
  Layers layers(Vec2 w, Vec2 fovea_world) const {
    const double h = cfg_.oct_height;
    const double d2 = (dot(w - fovea_world, w - fovea_world)) / (40.0 * 40.0);
    const double pit = 0.07 * h * std::exp(-d2);
    const double wave = 0.02 * h * std::sin(w.x / 53.0 + 0.7) + 0.015 * h * std::cos(w.y / 71.0);
    return {0.28 * h + pit + wave, 0.60 * h + 0.5 * wave};
  }

  void render_slice(ImageD& img, const std::vector<ColumnKind>& kinds, const std::vector<Layers>& geo) {
    const int H = cfg_.oct_height;
    const int W = cfg_.oct_width;
    img = ImageD(H, W);
    const double rpe_t = std::max(2.0, 0.035 * H);
    for (int c = 0; c < W; ++c) {
      const ColumnKind k = kinds[static_cast<std::size_t>(c)];
      const bool atrophic = (k == ColumnKind::atrophy || k == ColumnKind::confounder);
      const double rpe_gain = atrophic ? 0.3 : (k == ColumnKind::precursor ? 1.0 - cfg_.precursor_strength : 1.0);
      const double ez_gain = atrophic ? 0.0 : (k == ColumnKind::precursor ? 0.5 : 1.0);
      const double ilm = geo[static_cast<std::size_t>(c)].ilm;
      const double rpe = geo[static_cast<std::size_t>(c)].rpe;
      for (int r = 0; r < H; ++r) {
        const double z = r + 0.5;
        double v;
        if (z < ilm) {
          v = 0.04;
        } else if (z < rpe) {
          const double u = (z - ilm) / std::max(1.0, rpe - ilm);
          v = 0.22 + 0.35 * std::exp(-u / 0.12) - 0.08 * std::exp(-std::pow((u - 0.7) / 0.12, 2.0));
          v += 0.35 * ez_gain * std::exp(-std::pow((rpe - 2.0 * rpe_t - z) / (0.4 * rpe_t), 2.0));
        } else if (z < rpe + rpe_t) {
          v = 0.85 * rpe_gain;
        } else {
          const double d = z - rpe - rpe_t;
          v = 0.03 + 0.25 * std::exp(-d / (0.12 * H));
          if (atrophic) v += 0.45 * std::exp(-d / (0.25 * H));
        }
        if (cfg_.oct_noise > 0) v += gauss(cfg_.oct_noise);
        img(r, c) = quantized(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  const SynthConfig& cfg() const { return cfg_; }

 private:
  SynthConfig cfg_;
  std::mt19937_64 rng_;
};

// Fraction of footprint centers inside any lesion, per study geometry.
inline SegmentsMatrix sample_mask(const StudyMeta& m, const RigidTransform2D& world_to_study,
                                  const std::vector<Ellipse>& lesions, double scale) {
  SegmentsMatrix out(m.n_slices, m.oct_width);
  const RigidTransform2D inv = world_to_study.inverse();
  for (int s = 0; s < m.n_slices; ++s)
    for (int c = 0; c < m.oct_width; ++c) {
      const Vec2 w = inv(ir_from_oct(m, s + 0.5, c + 0.5));
      for (const Ellipse& e : lesions)
        if (e.contains(w, scale)) {
          out.set(s, c);
          break;
        }
    }
  return out;
}

}  // namespace synth_detail

// Deterministic series of n ≥ 1 synthetic studies of one eye. Atrophy area
// grows by cfg.growth_factor between consecutive studies; each study's
// anatomy is the previous one moved by a random rigid transform.
inline std::pair<std::vector<Study>, SeriesTruth> synth_series(std::uint64_t seed, const SynthConfig& cfg,
                                                                int n_studies) {
  using namespace synth_detail;
  if (n_studies < 1) throw Error("synth_series: need at least one study");
  if (!(cfg.growth_factor >= 1.0)) throw Error("synth: growth factor must be >= 1");
  Generator gen(seed, cfg);
  SeriesTruth truth;
  truth.growth_factor = cfg.growth_factor;

  const StudyMeta m0 = gen.meta(0);
  validate(m0);
  const Vec2 img_center{cfg.ir_size / 2.0, cfg.ir_size / 2.0};

  // Per-step rigid motions.
  truth.world_to_study.push_back(RigidTransform2D::identity());
  for (int k = 1; k < n_studies; ++k) {
    const double th = deg_to_rad(gen.uni(-cfg.max_rotation_deg, cfg.max_rotation_deg));
    const Vec2 sh{gen.uni(-cfg.max_translation_px, cfg.max_translation_px),
                  gen.uni(-cfg.max_translation_px, cfg.max_translation_px)};
    const RigidTransform2D step = RigidTransform2D::about(img_center, th, sh);
    const Rect moved = transformed_bounds(m0.fov(), step);
    if (moved.x0 < 0 || moved.y0 < 0 || moved.x1() > cfg.ir_size || moved.y1() > cfg.ir_size)
      throw Error("synth: transform pushes the FOV outside the IR image");
    truth.step_transforms.push_back(step);
    truth.world_to_study.push_back(compose(step, truth.world_to_study.back()));
  }

  const Vec2 fovea_world{m0.fov_origin.x + m0.fov_extent.x * gen.uni(0.4, 0.6),
                         m0.fov_origin.y + m0.fov_extent.y * gen.uni(0.4, 0.6)};
  const std::vector<Vessel> vessels = gen.make_vessels();

  // Lesion placement: at the largest scale every lesion must sit inside every
  // study's FOV (with a one-slice margin) and lesions must not touch.
  const double max_scale = std::pow(cfg.growth_factor, 0.5 * (n_studies - 1)) * 1.15;
  const double margin = 2.0 * m0.slice_spacing_px();
  std::vector<Ellipse> lesions;
  int attempts = 0;
  while (static_cast<int>(lesions.size()) < cfg.lesion_count) {
    if (++attempts > 2000) throw Error("synth: lesions exceed the FOV");
    Ellipse e;
    e.a = gen.uni(cfg.lesion_radius_min, cfg.lesion_radius_max);
    e.b = gen.uni(cfg.lesion_radius_min, cfg.lesion_radius_max);
    e.phi = gen.uni(0.0, std::numbers::pi);
    e.c = {gen.uni(m0.fov_origin.x, m0.fov_origin.x + m0.fov_extent.x),
           gen.uni(m0.fov_origin.y, m0.fov_origin.y + m0.fov_extent.y)};
    bool ok = true;
    for (int t = 0; t < 64 && ok; ++t) {
      const Vec2 bw = e.boundary(2.0 * std::numbers::pi * t / 64.0, max_scale);
      for (const RigidTransform2D& A : truth.world_to_study) {
        const Vec2 p = A(bw);
        const Rect f = m0.fov();
        if (p.x < f.x0 + margin || p.x > f.x1() - margin || p.y < f.y0 + margin || p.y > f.y1() - margin) {
          ok = false;
          break;
        }
      }
    }
    for (const Ellipse& o : lesions) {
      const double reach = (std::max(e.a, e.b) + std::max(o.a, o.b)) * max_scale + 3.0 * m0.slice_spacing_px();
      if (norm(e.c - o.c) < reach) ok = false;
    }
    if (ok) lesions.push_back(e);
  }

  // Calibrate per-study lesion scales so that sampled atrophy areas grow by
  // exactly the growth factor (up to one footprint).
  std::vector<StudyMeta> metas;
  for (int k = 0; k < n_studies; ++k) metas.push_back(gen.meta(k));
  truth.lesion_scales.push_back(1.0);
  truth.masks.push_back(sample_mask(metas[0], truth.world_to_study[0], lesions, 1.0));
  const double base = static_cast<double>(truth.masks[0].count());
  if (base <= 0) throw Error("synth: lesions too small for the OCT sampling grid");
  for (int k = 1; k < n_studies; ++k) {
    const double target = base * std::pow(cfg.growth_factor, k);
    double lo = truth.lesion_scales.back(), hi = lo * std::sqrt(cfg.growth_factor) * 1.5 + 1e-9;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double cnt = static_cast<double>(sample_mask(metas[k], truth.world_to_study[k], lesions, mid).count());
      (cnt < target ? lo : hi) = mid;
    }
    const double c_lo = static_cast<double>(sample_mask(metas[k], truth.world_to_study[k], lesions, lo).count());
    const double c_hi = static_cast<double>(sample_mask(metas[k], truth.world_to_study[k], lesions, hi).count());
    const double s = std::abs(c_lo - target) <= std::abs(c_hi - target) ? lo : hi;
    truth.lesion_scales.push_back(s);
    truth.masks.push_back(sample_mask(metas[k], truth.world_to_study[k], lesions, s));
  }

  // Confounders: small atrophy-lookalike blobs away from all lesions.
  std::vector<std::vector<Ellipse>> confounders(static_cast<std::size_t>(n_studies));
  for (int k = 1; k < n_studies; ++k) {
    int tries = 0;
    while (static_cast<int>(confounders[static_cast<std::size_t>(k)].size()) < cfg.confounder_count && ++tries < 500) {
      Ellipse e;
      e.a = gen.uni(6.0, 12.0);
      e.b = gen.uni(6.0, 12.0);
      e.phi = gen.uni(0.0, std::numbers::pi);
      e.c = {gen.uni(m0.fov_origin.x + margin, m0.fov_origin.x + m0.fov_extent.x - margin),
             gen.uni(m0.fov_origin.y + margin, m0.fov_origin.y + m0.fov_extent.y - margin)};
      bool ok = true;
      for (const Ellipse& o : lesions)
        if (norm(e.c - o.c) < std::max(e.a, e.b) + std::max(o.a, o.b) * max_scale + 10.0) ok = false;
      if (ok) confounders[static_cast<std::size_t>(k)].push_back(e);
    }
  }

  // Render.
  std::vector<Study> studies;
  for (int k = 0; k < n_studies; ++k) {
    const RigidTransform2D& A = truth.world_to_study[static_cast<std::size_t>(k)];
    const RigidTransform2D inv = A.inverse();
    Study s;
    s.id = "S" + std::to_string(k + 1);
    s.meta = metas[static_cast<std::size_t>(k)];
    s.meta.fovea = A(fovea_world);
    Mask vm;
    gen.render_ir(vessels, A, s.ir, vm);
    truth.vessel_masks.push_back(std::move(vm));

    const double scale = truth.lesion_scales[static_cast<std::size_t>(k)];
    const double next_scale = k + 1 < n_studies ? truth.lesion_scales[static_cast<std::size_t>(k + 1)]
                                                : scale * std::sqrt(cfg.growth_factor);
    SegmentsMatrix conf(cfg.n_slices, cfg.oct_width, s.id);
    std::vector<ColumnKind> kinds(static_cast<std::size_t>(cfg.oct_width));
    std::vector<Generator::Layers> geo(static_cast<std::size_t>(cfg.oct_width));
    for (int x = 0; x < cfg.n_slices; ++x) {
      for (int y = 0; y < cfg.oct_width; ++y) {
        const Vec2 w = inv(ir_from_oct(s.meta, x + 0.5, y + 0.5));
        ColumnKind kind = ColumnKind::healthy;
        if (truth.masks[static_cast<std::size_t>(k)].at(x, y)) {
          kind = ColumnKind::atrophy;
        } else {
          for (const Ellipse& e : lesions)
            if (e.contains(w, next_scale)) kind = ColumnKind::precursor;
          for (const Ellipse& e : confounders[static_cast<std::size_t>(k)])
            if (e.contains(w, 1.0)) kind = ColumnKind::confounder;
        }
        if (kind == ColumnKind::confounder) conf.set(x, y);
        kinds[static_cast<std::size_t>(y)] = kind;
        geo[static_cast<std::size_t>(y)] = gen.layers(w, fovea_world);
      }
      ImageD img;
      gen.render_slice(img, kinds, geo);
      s.slices.push_back(std::move(img));
    }
    truth.masks[static_cast<std::size_t>(k)].study_id = s.id;
    truth.confounder_masks.push_back(std::move(conf));
    validate(s);
    studies.push_back(std::move(s));
  }
  return {std::move(studies), std::move(truth)};
}

inline SynthPair synth_pair(std::uint64_t seed, const SynthConfig& cfg) {
  auto [studies, st] = synth_series(seed, cfg, 2);
  SynthPair out;
  out.prior = std::move(studies[0]);
  out.current = std::move(studies[1]);
  out.truth.true_transform = st.step_transforms[0];
  out.truth.prior_mask = std::move(st.masks[0]);
  out.truth.current_mask = std::move(st.masks[1]);
  out.truth.current_confounders = std::move(st.confounder_masks[1]);
  out.truth.vessel_masks = {std::move(st.vessel_masks[0]), std::move(st.vessel_masks[1])};
  out.truth.growth_factor = st.growth_factor;
  return out;
}

// Desk-scale studies: 64-row slices, 256 columns, atrophy-like confounders in
// follow-up studies and visible precursors of future atrophy.
inline SynthConfig desk_config() {
  SynthConfig c;
  c.oct_height = 64;
  c.oct_width = 256;
  c.confounder_count = 10;
  c.precursor_strength = 0.6;
  return c;
}

}  // namespace octchange
