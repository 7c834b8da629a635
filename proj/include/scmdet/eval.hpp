#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scmdet/geometry.hpp"

namespace scmdet {

struct CategoryAp {
  double ap;
  double ap50;
  double ap75;
};

/// COCO-style scores: ap averaged over IoU thresholds 0.50:0.05:0.95 and
/// categories, ap50/ap75 at the fixed thresholds, plus the per-category
/// breakdown. per_image_seconds is filled by pipeline runners, not by the
/// evaluator.
struct EvalResult {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::map<int, CategoryAp> per_category;
  double per_image_seconds = 0.0;
};

/// The ten COCO IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

namespace detail {

/// Matches one detection against the unmatched ground truths of its image:
/// highest IoU wins, ties go to the smaller annotation id. Returns the index
/// of the matched ground truth or -1.
inline int match_one(const Detection& det, const std::vector<const GroundTruth*>& gts,
                     std::vector<char>& taken, double iou_t) {
  int best = -1;
  double best_iou = 0.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (taken[g]) continue;
    const double v = iou(det.bbox, gts[g]->bbox);
    if (v < iou_t) continue;
    if (best < 0 || v > best_iou ||
        (v == best_iou && gts[g]->annotation_id < gts[best]->annotation_id)) {
      best = static_cast<int>(g);
      best_iou = v;
    }
  }
  if (best >= 0) taken[best] = 1;
  return best;
}

}  // namespace detail

/// Greedy matching for one category on one image. Detections are processed in
/// score order; each takes the unmatched ground truth with the highest
/// IoU >= iou_t. Returns (detection, is_true_positive) in processed order.
inline std::vector<std::pair<Detection, bool>> match_greedy(const std::vector<Detection>& dets,
                                                            const std::vector<GroundTruth>& gts,
                                                            double iou_t) {
  for (const Detection& d : dets) {
    if (d.image_id != dets.front().image_id || d.category_id != dets.front().category_id) {
      throw std::invalid_argument("match_greedy: detections mix images or categories");
    }
  }
  for (const GroundTruth& g : gts) {
    if (g.image_id != gts.front().image_id || g.category_id != gts.front().category_id) {
      throw std::invalid_argument("match_greedy: ground truths mix images or categories");
    }
  }
  if (!dets.empty() && !gts.empty() &&
      (dets.front().image_id != gts.front().image_id ||
       dets.front().category_id != gts.front().category_id)) {
    throw std::invalid_argument("match_greedy: detections and ground truths disagree on image or category");
  }

  std::vector<const GroundTruth*> gt_ptrs;
  gt_ptrs.reserve(gts.size());
  for (const GroundTruth& g : gts) gt_ptrs.push_back(&g);
  std::vector<char> taken(gts.size(), 0);

  std::vector<std::pair<Detection, bool>> out;
  out.reserve(dets.size());
  for (std::size_t idx : score_order(dets)) {
    const bool tp = detail::match_one(dets[idx], gt_ptrs, taken, iou_t) >= 0;
    out.emplace_back(dets[idx], tp);
  }
  return out;
}

/// 101-point interpolated average precision over a score-ordered TP/FP list.
/// The precision envelope (running max from the right) is sampled at recalls
/// 0.00, 0.01, ..., 1.00. Returns nullopt when there is nothing to score
/// (no ground truths and no detections) so the caller can exclude the
/// category from its mean; zero ground truths with detections scores 0.
inline std::optional<double> average_precision(const std::vector<std::uint8_t>& labels, int n_gt) {
  if (n_gt < 0) throw std::invalid_argument("average_precision: n_gt must be >= 0");
  if (n_gt == 0) {
    if (labels.empty()) return std::nullopt;
    return 0.0;
  }
  const std::size_t n = labels.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += labels[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / n_gt;
  }
  for (std::size_t k = n; k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double sum = 0.0;
  std::size_t k = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    while (k < n && recall[k] < r) ++k;
    if (k < n) sum += precision[k];
  }
  return sum / 101.0;
}

/// Full COCO-protocol evaluation: per (category, threshold), detections are
/// pooled across images, sorted by score, matched greedily per image, and
/// scored by 101-point AP. Categories with no ground truths and no detections
/// are excluded from the means.
inline EvalResult coco_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                          const std::vector<ImageId>& images, const std::vector<int>& categories,
                          const std::vector<double>& thresholds = coco_thresholds()) {
  if (thresholds.empty()) throw std::invalid_argument("coco_ap: thresholds must be non-empty");
  for (std::size_t i = 0; i + 1 < thresholds.size(); ++i) {
    if (!(thresholds[i] < thresholds[i + 1])) {
      throw std::invalid_argument("coco_ap: thresholds must be strictly ascending");
    }
  }
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("coco_ap: thresholds must lie in [0,1]");
  }
  const std::unordered_set<ImageId> image_set(images.begin(), images.end());
  const std::unordered_set<int> category_set(categories.begin(), categories.end());
  for (const Detection& d : dets) {
    if (!image_set.count(d.image_id)) {
      throw std::invalid_argument("coco_ap: detection references unknown image " + std::to_string(d.image_id));
    }
    if (!category_set.count(d.category_id)) {
      throw std::invalid_argument("coco_ap: detection references unknown category " +
                                  std::to_string(d.category_id));
    }
  }
  for (const GroundTruth& g : gts) {
    if (!image_set.count(g.image_id)) {
      throw std::invalid_argument("coco_ap: annotation " + std::to_string(g.annotation_id) +
                                  " references unknown image " + std::to_string(g.image_id));
    }
    if (!category_set.count(g.category_id)) {
      throw std::invalid_argument("coco_ap: annotation " + std::to_string(g.annotation_id) +
                                  " references unknown category " + std::to_string(g.category_id));
    }
  }

  auto near = [](double a, double b) { return std::abs(a - b) < 1e-9; };

  EvalResult result;
  double ap_sum = 0.0, ap50_sum = 0.0, ap75_sum = 0.0;
  int included = 0;
  const std::set<int> ordered_categories(categories.begin(), categories.end());
  for (int category : ordered_categories) {
    std::unordered_map<ImageId, std::vector<const GroundTruth*>> gts_by_image;
    int n_gt = 0;
    for (const GroundTruth& g : gts) {
      if (g.category_id != category) continue;
      gts_by_image[g.image_id].push_back(&g);
      ++n_gt;
    }
    std::vector<Detection> cat_dets;
    for (const Detection& d : dets) {
      if (d.category_id == category) cat_dets.push_back(d);
    }
    if (n_gt == 0 && cat_dets.empty()) continue;

    const std::vector<std::size_t> order = score_order(cat_dets);
    CategoryAp cat{0.0, 0.0, 0.0};
    double cat_sum = 0.0;
    for (double t : thresholds) {
      std::unordered_map<ImageId, std::vector<char>> taken;
      for (const auto& [img, img_gts] : gts_by_image) taken[img].assign(img_gts.size(), 0);
      std::vector<std::uint8_t> labels;
      labels.reserve(cat_dets.size());
      for (std::size_t idx : order) {
        const Detection& d = cat_dets[idx];
        auto it = gts_by_image.find(d.image_id);
        bool tp = false;
        if (it != gts_by_image.end()) {
          tp = detail::match_one(d, it->second, taken[d.image_id], t) >= 0;
        }
        labels.push_back(tp ? 1 : 0);
      }
      const double ap_t = average_precision(labels, n_gt).value_or(0.0);
      cat_sum += ap_t;
      if (near(t, 0.50)) cat.ap50 = ap_t;
      if (near(t, 0.75)) cat.ap75 = ap_t;
    }
    cat.ap = cat_sum / static_cast<double>(thresholds.size());
    result.per_category[category] = cat;
    ap_sum += cat.ap;
    ap50_sum += cat.ap50;
    ap75_sum += cat.ap75;
    ++included;
  }
  if (included > 0) {
    result.ap = ap_sum / included;
    result.ap50 = ap50_sum / included;
    result.ap75 = ap75_sum / included;
  }
  return result;
}

}  // namespace scmdet
