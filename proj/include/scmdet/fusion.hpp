#pragma once

#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scmdet/geometry.hpp"
#include "scmdet/scm.hpp"

namespace scmdet {

struct FusionConfig {
  double nms_iou = 0.5;
  double boundary_margin = 2.0;

  void validate() const {
    if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw std::invalid_argument("FusionConfig: nms_iou must be in [0,1]");
    if (boundary_margin < 0.0) throw std::invalid_argument("FusionConfig: boundary_margin must be >= 0");
  }
};

/// Maps a global-coordinate detection into the crop's letterboxed canvas.
inline Detection to_crop(const Detection& d, const CropPlan& plan) {
  BoundingBox b((d.bbox.x - plan.source.x) * plan.scale + plan.pad_x,
                (d.bbox.y - plan.source.y) * plan.scale + plan.pad_y,
                d.bbox.w * plan.scale, d.bbox.h * plan.scale);
  return Detection{d.image_id, d.category_id, b, d.score};
}

/// Inverse of to_crop, clipped to the plan's source rectangle. Boxes entirely
/// inside the letterbox padding have no source pixels and are dropped.
inline std::optional<Detection> to_global(const Detection& d, const CropPlan& plan) {
  BoundingBox b((d.bbox.x - plan.pad_x) / plan.scale + plan.source.x,
                (d.bbox.y - plan.pad_y) / plan.scale + plan.source.y,
                d.bbox.w / plan.scale, d.bbox.h / plan.scale);
  std::optional<BoundingBox> clipped = clip(b, plan.source);
  if (!clipped) return std::nullopt;
  return Detection{d.image_id, d.category_id, *clipped, d.score};
}

/// Drops detections touching a crop-source edge within margin pixels, unless
/// that edge coincides with the image boundary (within margin). Detections
/// must already be in global coordinates.
inline std::vector<Detection> filter_boundary(const std::vector<Detection>& dets, const CropPlan& plan,
                                              int image_w, int image_h, double margin) {
  const BoundingBox& src = plan.source;
  const bool left_interior = src.x > margin;
  const bool top_interior = src.y > margin;
  const bool right_interior = image_w - src.right() > margin;
  const bool bottom_interior = image_h - src.bottom() > margin;

  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const Detection& d : dets) {
    const BoundingBox& b = d.bbox;
    const bool drop = (left_interior && b.x <= src.x + margin) ||
                      (top_interior && b.y <= src.y + margin) ||
                      (right_interior && b.right() >= src.right() - margin) ||
                      (bottom_interior && b.bottom() >= src.bottom() - margin);
    if (!drop) kept.push_back(d);
  }
  return kept;
}

/// Merges coarse-pass detections with per-crop fine detections: fine boxes are
/// mapped to global coordinates, boundary-filtered, everything is clipped to
/// the image and reduced by per-category NMS. Fine detections arrive in crop
/// coordinates.
inline std::vector<Detection> fuse(const std::vector<Detection>& coarse,
                                   const std::vector<std::pair<CropPlan, std::vector<Detection>>>& fine,
                                   const FusionConfig& cfg, int image_w, int image_h) {
  cfg.validate();
  const BoundingBox image_bounds(0.0, 0.0, image_w, image_h);

  std::optional<ImageId> id;
  auto check_id = [&](const Detection& d) {
    if (!id) id = d.image_id;
    else if (*id != d.image_id) throw std::invalid_argument("fuse: detections mix multiple image ids");
  };
  for (const Detection& d : coarse) check_id(d);
  for (const auto& [plan, dets] : fine) {
    for (const Detection& d : dets) check_id(d);
  }

  std::vector<Detection> pool;
  auto add_clipped = [&](const Detection& d) {
    if (std::optional<BoundingBox> b = clip(d.bbox, image_bounds)) {
      pool.push_back(Detection{d.image_id, d.category_id, *b, d.score});
    }
  };
  for (const Detection& d : coarse) add_clipped(d);
  for (const auto& [plan, dets] : fine) {
    std::vector<Detection> mapped;
    mapped.reserve(dets.size());
    for (const Detection& d : dets) {
      if (std::optional<Detection> g = to_global(d, plan)) mapped.push_back(*g);
    }
    for (const Detection& d : filter_boundary(mapped, plan, image_w, image_h, cfg.boundary_margin)) {
      add_clipped(d);
    }
  }
  return nms(pool, cfg.nms_iou);
}

}  // namespace scmdet
