#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace scmdet {

using ImageId = std::int64_t;

/// Axis-aligned box in top-left + width/height pixel coordinates (COCO layout).
/// Degenerate boxes (zero or negative area, non-finite fields) are rejected at
/// construction so downstream arithmetic never has to re-check.
struct BoundingBox {
  double x;
  double y;
  double w;
  double h;

  BoundingBox(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
    if (!(std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h))) {
      throw std::invalid_argument("BoundingBox: non-finite field");
    }
    if (!(w > 0.0 && h > 0.0)) {
      throw std::invalid_argument("BoundingBox: width and height must be positive");
    }
  }

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
};

/// One detector output box with its confidence.
struct Detection {
  ImageId image_id;
  int category_id;
  BoundingBox bbox;
  double score;
};

/// One annotated object.
struct GroundTruth {
  std::int64_t annotation_id;
  ImageId image_id;
  int category_id;
  BoundingBox bbox;
};

inline double area(const BoundingBox& b) { return b.w * b.h; }

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  if (iw <= 0.0) return 0.0;
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (ih <= 0.0) return 0.0;
  return iw * ih;
}

/// Intersection over union; 0 for disjoint boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (area(a) + area(b) - inter);
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box not
/// covered by the union. Range (-1, 1], equals IoU when the enclosing box
/// coincides with the union.
inline double giou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  const double cw = std::max(a.right(), b.right()) - std::min(a.x, b.x);
  const double ch = std::max(a.bottom(), b.bottom()) - std::min(a.y, b.y);
  const double hull = cw * ch;
  const double iou_val = inter <= 0.0 ? 0.0 : inter / uni;
  return iou_val - std::max(0.0, (hull - uni) / hull);
}

/// Intersection rectangle of b with bounds, or nullopt when it has zero area.
inline std::optional<BoundingBox> clip(const BoundingBox& b, const BoundingBox& bounds) {
  const double x0 = std::max(b.x, bounds.x);
  const double y0 = std::max(b.y, bounds.y);
  const double x1 = std::min(b.right(), bounds.right());
  const double y1 = std::min(b.bottom(), bounds.bottom());
  if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0) return std::nullopt;
  return BoundingBox(x0, y0, x1 - x0, y1 - y0);
}

/// Ordering shared by NMS and evaluation: score descending, then left edge,
/// then top edge. Used with stable_sort so full ties keep input order.
inline bool score_order_less(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.bbox.x != b.bbox.x) return a.bbox.x < b.bbox.x;
  return a.bbox.y < b.bbox.y;
}

/// Sorts detection indices into the deterministic processing order.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return score_order_less(dets[i], dets[j]);
  });
  return order;
}

/// Greedy per-category non-maximum suppression. A detection is kept iff its
/// IoU with every already-kept detection of the same category is <= threshold.
/// Output is in the deterministic score order. All inputs must share one
/// image_id.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("nms: iou_threshold must be in [0,1]");
  }
  for (const Detection& d : dets) {
    if (d.image_id != dets.front().image_id) {
      throw std::invalid_argument("nms: detections mix multiple image ids");
    }
  }
  std::vector<Detection> kept;
  std::unordered_map<int, std::vector<std::size_t>> kept_by_category;
  for (std::size_t idx : score_order(dets)) {
    const Detection& d = dets[idx];
    bool keep = true;
    for (std::size_t k : kept_by_category[d.category_id]) {
      if (iou(d.bbox, kept[k].bbox) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) {
      kept_by_category[d.category_id].push_back(kept.size());
      kept.push_back(d);
    }
  }
  return kept;
}

}  // namespace scmdet
