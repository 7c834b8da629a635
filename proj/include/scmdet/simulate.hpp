#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scmdet/eval.hpp"
#include "scmdet/fusion.hpp"
#include "scmdet/geometry.hpp"
#include "scmdet/heatmap.hpp"
#include "scmdet/rng.hpp"
#include "scmdet/scm.hpp"

namespace scmdet {

/// Synthetic scene layout: Gaussian vehicle clusters plus a uniform background
/// scatter. Vehicle min-dimensions are log-normal; aspect ratios uniform.
struct SceneSpec {
  struct Cluster {
    double center_x;
    double center_y;
    double spread_sigma;
    int count;
  };

  int image_w = 2000;
  int image_h = 1500;
  std::vector<Cluster> clusters;
  int background_count = 0;
  double size_log_mean = 2.6390573296152584;  // ln(14)
  double size_log_sigma = 0.4;
  double aspect_min = 0.8;
  double aspect_max = 1.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (image_w < 1 || image_h < 1) throw std::invalid_argument("SceneSpec: image dims must be positive");
    if (background_count < 0) throw std::invalid_argument("SceneSpec: background_count must be >= 0");
    for (const Cluster& c : clusters) {
      if (c.count < 0) throw std::invalid_argument("SceneSpec: cluster count must be >= 0");
      if (!(c.spread_sigma > 0.0)) throw std::invalid_argument("SceneSpec: spread_sigma must be positive");
    }
    if (!(aspect_min >= 0.2 && aspect_max <= 5.0 && aspect_min <= aspect_max)) {
      throw std::invalid_argument("SceneSpec: aspect bounds must satisfy 0.2 <= min <= max <= 5");
    }
    if (!(size_log_sigma >= 0.0)) throw std::invalid_argument("SceneSpec: size_log_sigma must be >= 0");
  }
};

/// Logistic size-recall pseudo-detector: apparent min-dimension s50 gives 50%
/// recall, slope is the logistic width. Corner noise and false positives are
/// drawn from keyed streams so runs are reproducible and independent of
/// evaluation order.
struct DetectorModel {
  double s50 = 24.0;
  double slope = 6.0;
  double loc_sigma_frac = 0.05;
  double score_tp_mean = 0.8;
  double fp_rate_per_megapixel = 2.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(s50 > 0.0)) throw std::invalid_argument("DetectorModel: s50 must be positive");
    if (!(slope > 0.0)) throw std::invalid_argument("DetectorModel: slope must be positive");
    if (!(loc_sigma_frac >= 0.0 && loc_sigma_frac < 0.5)) {
      throw std::invalid_argument("DetectorModel: loc_sigma_frac must be in [0, 0.5)");
    }
    if (!(score_tp_mean > 0.0 && score_tp_mean <= 1.0)) {
      throw std::invalid_argument("DetectorModel: score_tp_mean must be in (0,1]");
    }
    if (fp_rate_per_megapixel < 0.0) {
      throw std::invalid_argument("DetectorModel: fp_rate_per_megapixel must be >= 0");
    }
  }
};

/// Generated scene: ground truth boxes plus, for each, the index of the
/// cluster it came from (-1 for background scatter).
struct Scene {
  std::vector<GroundTruth> ground_truth;
  std::vector<int> source_cluster;
  int image_w;
  int image_h;
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Probability that a vehicle of the given apparent min-dimension is detected.
inline double detection_probability(const DetectorModel& model, double apparent_size) {
  return logistic((apparent_size - model.s50) / model.slope);
}

/// Draws the scene. Cluster vehicles first (cluster order, then draw order),
/// then background. Boxes are clipped to the image and dropped when clipping
/// leaves a dimension under one pixel; annotation ids count every draw so a
/// dropped box never renumbers the rest.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(derive_key(spec.seed, 0x5ce9eULL));
  Scene scene;
  scene.image_w = spec.image_w;
  scene.image_h = spec.image_h;

  std::int64_t next_id = 0;
  auto emit = [&](double cx, double cy, int cluster_index) {
    ++next_id;
    const double min_dim = std::exp(spec.size_log_mean + spec.size_log_sigma * rng.normal());
    const double aspect = rng.uniform(spec.aspect_min, spec.aspect_max);
    const double w = aspect >= 1.0 ? min_dim * aspect : min_dim;
    const double h = aspect >= 1.0 ? min_dim : min_dim / aspect;
    const double x0 = std::max(0.0, cx - w / 2.0);
    const double y0 = std::max(0.0, cy - h / 2.0);
    const double x1 = std::min(static_cast<double>(spec.image_w), cx + w / 2.0);
    const double y1 = std::min(static_cast<double>(spec.image_h), cy + h / 2.0);
    if (x1 - x0 < 1.0 || y1 - y0 < 1.0) return;
    scene.ground_truth.push_back(
        GroundTruth{next_id, 1, 1, BoundingBox(x0, y0, x1 - x0, y1 - y0)});
    scene.source_cluster.push_back(cluster_index);
  };

  for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
    const SceneSpec::Cluster& cluster = spec.clusters[c];
    for (int k = 0; k < cluster.count; ++k) {
      const double cx = std::clamp(cluster.center_x + cluster.spread_sigma * rng.normal(), 0.0,
                                   static_cast<double>(spec.image_w));
      const double cy = std::clamp(cluster.center_y + cluster.spread_sigma * rng.normal(), 0.0,
                                   static_cast<double>(spec.image_h));
      emit(cx, cy, static_cast<int>(c));
    }
  }
  for (int k = 0; k < spec.background_count; ++k) {
    emit(rng.uniform(0.0, spec.image_w), rng.uniform(0.0, spec.image_h), -1);
  }
  return scene;
}

namespace detail {

inline std::uint64_t view_stream(const DetectorModel& model, double view_scale,
                                 const BoundingBox& view_bounds) {
  std::uint64_t k = derive_key(model.seed, 0xFA15EULL);
  k = splitmix64(k ^ std::bit_cast<std::uint64_t>(view_scale));
  k = splitmix64(k ^ std::bit_cast<std::uint64_t>(view_bounds.x));
  k = splitmix64(k ^ std::bit_cast<std::uint64_t>(view_bounds.y));
  k = splitmix64(k ^ std::bit_cast<std::uint64_t>(view_bounds.w));
  k = splitmix64(k ^ std::bit_cast<std::uint64_t>(view_bounds.h));
  return k;
}

}  // namespace detail

/// Runs the pseudo-detector over one view: ground truths whose centers fall
/// inside view_bounds are detected with the logistic probability of their
/// apparent size at view_scale. Detected boxes get corner noise in viewed
/// pixels, are mapped back to global coordinates and clipped to the view.
/// Per-object draws are keyed by (model seed, annotation id), so raising
/// view_scale never flips a detected vehicle back to undetected. False
/// positives are drawn per view at fp_rate_per_megapixel of viewed area.
inline std::vector<Detection> simulate_detector(const std::vector<GroundTruth>& gts,
                                                const DetectorModel& model, double view_scale,
                                                const BoundingBox& view_bounds) {
  model.validate();
  if (!(view_scale > 0.0)) throw std::invalid_argument("simulate_detector: view_scale must be positive");

  std::vector<Detection> dets;
  for (const GroundTruth& gt : gts) {
    const double cx = gt.bbox.center_x();
    const double cy = gt.bbox.center_y();
    if (cx < view_bounds.x || cx > view_bounds.right() || cy < view_bounds.y ||
        cy > view_bounds.bottom()) {
      continue;
    }
    Rng rng(derive_key(model.seed, static_cast<std::uint64_t>(gt.annotation_id)));
    const double apparent = std::min(gt.bbox.w, gt.bbox.h) * view_scale;
    const double u = rng.uniform01();
    if (u >= detection_probability(model, apparent)) continue;

    // Corner noise in viewed pixels, then back to global coordinates.
    const double noise = model.loc_sigma_frac * apparent;
    double vx0 = (gt.bbox.x - view_bounds.x) * view_scale + noise * rng.normal();
    double vy0 = (gt.bbox.y - view_bounds.y) * view_scale + noise * rng.normal();
    double vx1 = (gt.bbox.right() - view_bounds.x) * view_scale + noise * rng.normal();
    double vy1 = (gt.bbox.bottom() - view_bounds.y) * view_scale + noise * rng.normal();
    const double score = std::clamp(model.score_tp_mean + 0.08 * rng.normal(), 0.01, 1.0);

    double gx0 = vx0 / view_scale + view_bounds.x;
    double gy0 = vy0 / view_scale + view_bounds.y;
    double gx1 = vx1 / view_scale + view_bounds.x;
    double gy1 = vy1 / view_scale + view_bounds.y;
    if (gx1 - gx0 < 0.5) gx1 = gx0 + 0.5;
    if (gy1 - gy0 < 0.5) gy1 = gy0 + 0.5;
    const std::optional<BoundingBox> box =
        clip(BoundingBox(gx0, gy0, gx1 - gx0, gy1 - gy0), view_bounds);
    if (!box) continue;
    dets.push_back(Detection{gt.image_id, gt.category_id, *box, score});
  }

  if (model.fp_rate_per_megapixel > 0.0) {
    Rng rng(detail::view_stream(model, view_scale, view_bounds));
    const double viewed_mpx = (view_bounds.w * view_scale) * (view_bounds.h * view_scale) / 1e6;
    const int n_fp = rng.poisson(model.fp_rate_per_megapixel * viewed_mpx);
    for (int k = 0; k < n_fp; ++k) {
      const double cx = rng.uniform(view_bounds.x, view_bounds.right());
      const double cy = rng.uniform(view_bounds.y, view_bounds.bottom());
      // Sizes resampled from the scene's own boxes; bare fallback when the
      // scene is empty.
      double w = 16.0, h = 16.0;
      ImageId image_id = 1;
      int category_id = 1;
      if (!gts.empty()) {
        const std::size_t idx =
            std::min(gts.size() - 1, static_cast<std::size_t>(rng.uniform01() * gts.size()));
        w = gts[idx].bbox.w;
        h = gts[idx].bbox.h;
        image_id = gts[idx].image_id;
        category_id = gts[idx].category_id;
      }
      const double score = std::clamp(0.6 * model.score_tp_mean + 0.1 * rng.normal(), 0.01, 1.0);
      const std::optional<BoundingBox> box =
          clip(BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h), view_bounds);
      if (!box || box->w < 0.5 || box->h < 0.5) continue;
      dets.push_back(Detection{image_id, category_id, *box, score});
    }
  }
  return dets;
}

/// Everything one simulated image produces, kept for inspection and export.
struct PipelineOutcome {
  Scene scene;
  std::vector<Detection> coarse;
  Heatmap heatmap;
  Proposal proposal;
  std::vector<std::pair<CropPlan, std::vector<Detection>>> fine;
  std::vector<Detection> coarse_final;
  std::vector<Detection> fused;
  EvalResult coarse_only;
  EvalResult fused_eval;
};

/// Full loop: coarse pass over the letterboxed whole image, heatmap splatted
/// from the coarse detections, crop proposal, fine pass per crop at the
/// crop's plan scale, fusion, and COCO evaluation of both variants against
/// the scene's ground truth. per_image_seconds carries the wall clock of each
/// variant's detection path (evaluation excluded).
inline PipelineOutcome run_pipeline(const SceneSpec& scene_spec, const DetectorModel& model,
                                    const SCMConfig& scm_cfg, const HeatmapConfig& heatmap_cfg = {},
                                    const FusionConfig& fusion_cfg = {}) {
  scm_cfg.validate();
  heatmap_cfg.validate();
  fusion_cfg.validate();

  using Clock = std::chrono::steady_clock;

  Scene scene = generate_scene(scene_spec);
  const int w = scene.image_w;
  const int h = scene.image_h;
  const BoundingBox image_bounds(0.0, 0.0, w, h);
  const double coarse_scale =
      std::min(static_cast<double>(scm_cfg.target_w) / w, static_cast<double>(scm_cfg.target_h) / h);

  const auto t_gen = Clock::now();
  std::vector<Detection> coarse = simulate_detector(scene.ground_truth, model, coarse_scale, image_bounds);
  const auto t_coarse = Clock::now();

  std::vector<Detection> coarse_final = fuse(coarse, {}, fusion_cfg, w, h);
  const auto t_coarse_nms = Clock::now();

  Heatmap heat = splat(coarse, w, h, heatmap_cfg);
  Proposal proposal = propose(heat, scm_cfg, w, h, heatmap_cfg.binarize_threshold);

  std::vector<std::pair<CropPlan, std::vector<Detection>>> fine;
  fine.reserve(proposal.plans.size());
  for (const CropPlan& plan : proposal.plans) {
    std::vector<Detection> global_dets = simulate_detector(scene.ground_truth, model, plan.scale, plan.source);
    std::vector<Detection> crop_dets;
    crop_dets.reserve(global_dets.size());
    for (const Detection& d : global_dets) crop_dets.push_back(to_crop(d, plan));
    fine.emplace_back(plan, std::move(crop_dets));
  }
  std::vector<Detection> fused = fuse(coarse, fine, fusion_cfg, w, h);
  const auto t_fused = Clock::now();

  const std::vector<ImageId> images{1};
  const std::vector<int> categories{1};
  EvalResult coarse_eval = coco_ap(coarse_final, scene.ground_truth, images, categories);
  EvalResult fused_eval = coco_ap(fused, scene.ground_truth, images, categories);

  const auto seconds = [](Clock::duration d) {
    return std::chrono::duration_cast<std::chrono::duration<double>>(d).count();
  };
  coarse_eval.per_image_seconds = seconds(t_coarse_nms - t_gen);
  fused_eval.per_image_seconds = seconds((t_coarse - t_gen) + (t_fused - t_coarse_nms));

  PipelineOutcome outcome{std::move(scene),  std::move(coarse), std::move(heat),
                          std::move(proposal), std::move(fine), std::move(coarse_final),
                          std::move(fused),  coarse_eval,       fused_eval};
  return outcome;
}

}  // namespace scmdet
