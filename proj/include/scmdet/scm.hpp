#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "scmdet/geometry.hpp"
#include "scmdet/heatmap.hpp"

namespace scmdet {

/// Crop-proposal parameters. Defaults: 16x10 grid, top-30 cells, at most two
/// crops of 1024x640. crop_budget 0 disables cropping entirely.
struct SCMConfig {
  int grid_x = 16;
  int grid_y = 10;
  int top_k = 30;
  int crop_budget = 2;
  double pad = 16.0;
  int target_w = 1024;
  int target_h = 640;
  int min_region_cells = 1;

  void validate() const {
    if (grid_x < 1 || grid_y < 1) throw std::invalid_argument("SCMConfig: grid dims must be positive");
    if (top_k < 1) throw std::invalid_argument("SCMConfig: top_k must be >= 1");
    if (top_k > grid_x * grid_y) throw std::invalid_argument("SCMConfig: top_k exceeds grid cell count");
    if (crop_budget < 0) throw std::invalid_argument("SCMConfig: crop_budget must be >= 0");
    if (pad < 0.0) throw std::invalid_argument("SCMConfig: pad must be >= 0");
    if (target_w < 1 || target_h < 1) throw std::invalid_argument("SCMConfig: target dims must be positive");
    if (min_region_cells < 1) throw std::invalid_argument("SCMConfig: min_region_cells must be >= 1");
  }
};

/// One grid cell, column i and row j.
struct GridCell {
  int i;
  int j;

  friend bool operator==(const GridCell& a, const GridCell& b) { return a.i == b.i && a.j == b.j; }
};

/// Row-major ordering: smaller row first, then smaller column.
inline bool row_major_less(const GridCell& a, const GridCell& b) {
  if (a.j != b.j) return a.j < b.j;
  return a.i < b.i;
}

/// A merged group of dense grid cells realized as an image-pixel rectangle.
struct ClusterRegion {
  std::vector<GridCell> cells;  // row-major sorted, eight-connected
  double aggregate_density;
  BoundingBox bbox_px;
};

/// Aspect-preserving resize of a source rectangle onto a fixed target canvas.
/// Exactly one of pad_x/pad_y is nonzero unless the aspect matches.
struct CropPlan {
  BoundingBox source;
  double scale;
  double pad_x;
  double pad_y;
  int target_w;
  int target_h;
};

/// The top_k highest-density cells, excluding zero-density cells. Ties break
/// row-major. Returned row-major sorted.
inline std::vector<GridCell> select_topk(const GridDensities& densities, int top_k) {
  if (top_k < 1) throw std::invalid_argument("select_topk: top_k must be >= 1");
  std::vector<GridCell> cells;
  for (int j = 0; j < densities.grid_y; ++j) {
    for (int i = 0; i < densities.grid_x; ++i) {
      if (densities.at(i, j) > 0.0) cells.push_back({i, j});
    }
  }
  std::stable_sort(cells.begin(), cells.end(), [&](const GridCell& a, const GridCell& b) {
    const double da = densities.at(a.i, a.j);
    const double db = densities.at(b.i, b.j);
    if (da != db) return da > db;
    return row_major_less(a, b);
  });
  if (cells.size() > static_cast<std::size_t>(top_k)) cells.resize(top_k);
  std::sort(cells.begin(), cells.end(), row_major_less);
  return cells;
}

/// Partitions cells into maximal components under eight-adjacency
/// (|di| <= 1 and |dj| <= 1, excluding self). Union-find over the input set.
inline std::vector<std::vector<GridCell>> merge_8connected(const std::vector<GridCell>& cells) {
  const std::size_t n = cells.size();
  std::unordered_map<std::int64_t, std::size_t> index;
  index.reserve(n);
  auto key = [](int i, int j) { return (static_cast<std::int64_t>(j) << 32) | static_cast<std::uint32_t>(i); };
  for (std::size_t k = 0; k < n; ++k) index[key(cells[k].i, cells[k].j)] = k;

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  auto unite = [&](std::size_t a, std::size_t b) { parent[find(a)] = find(b); };

  for (std::size_t k = 0; k < n; ++k) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0) continue;
        auto it = index.find(key(cells[k].i + di, cells[k].j + dj));
        if (it != index.end()) unite(k, it->second);
      }
    }
  }

  std::unordered_map<std::size_t, std::vector<GridCell>> groups;
  for (std::size_t k = 0; k < n; ++k) groups[find(k)].push_back(cells[k]);

  std::vector<std::vector<GridCell>> components;
  components.reserve(groups.size());
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end(), row_major_less);
    components.push_back(std::move(members));
  }
  std::sort(components.begin(), components.end(),
            [](const std::vector<GridCell>& a, const std::vector<GridCell>& b) {
              return row_major_less(a.front(), b.front());
            });
  return components;
}

/// Realizes a component as an image-pixel rectangle: the hull of the member
/// cells' pixel windows, expanded by pad on each side and clipped to the
/// image. aggregate_density is the sum of member cell densities.
inline ClusterRegion region_bbox(const std::vector<GridCell>& cells, const GridDensities& densities,
                                 int image_w, int image_h, int downsample, double pad) {
  if (cells.empty()) throw std::invalid_argument("region_bbox: empty region");
  double x0 = std::numeric_limits<double>::max();
  double y0 = std::numeric_limits<double>::max();
  double x1 = std::numeric_limits<double>::lowest();
  double y1 = std::numeric_limits<double>::lowest();
  double aggregate = 0.0;
  for (const GridCell& c : cells) {
    aggregate += densities.at(c.i, c.j);
    x0 = std::min(x0, static_cast<double>(grid_window_start(c.i, densities.heatmap_w, densities.grid_x)) * downsample);
    x1 = std::max(x1, static_cast<double>(grid_window_start(c.i + 1, densities.heatmap_w, densities.grid_x)) * downsample);
    y0 = std::min(y0, static_cast<double>(grid_window_start(c.j, densities.heatmap_h, densities.grid_y)) * downsample);
    y1 = std::max(y1, static_cast<double>(grid_window_start(c.j + 1, densities.heatmap_h, densities.grid_y)) * downsample);
  }
  x0 = std::max(0.0, x0 - pad);
  y0 = std::max(0.0, y0 - pad);
  x1 = std::min(static_cast<double>(image_w), x1 + pad);
  y1 = std::min(static_cast<double>(image_h), y1 + pad);
  std::vector<GridCell> sorted = cells;
  std::sort(sorted.begin(), sorted.end(), row_major_less);
  return ClusterRegion{std::move(sorted), aggregate, BoundingBox(x0, y0, x1 - x0, y1 - y0)};
}

/// Ranks regions by aggregate density (ties: more cells, then row-major
/// position of the first cell) and keeps at most crop_budget of them. Regions
/// below min_region_cells are dropped first.
inline std::vector<ClusterRegion> pick_crops(const std::vector<ClusterRegion>& regions,
                                             const SCMConfig& cfg) {
  std::vector<ClusterRegion> out;
  for (const ClusterRegion& r : regions) {
    if (static_cast<int>(r.cells.size()) >= cfg.min_region_cells) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const ClusterRegion& a, const ClusterRegion& b) {
    if (a.aggregate_density != b.aggregate_density) return a.aggregate_density > b.aggregate_density;
    if (a.cells.size() != b.cells.size()) return a.cells.size() > b.cells.size();
    return row_major_less(a.cells.front(), b.cells.front());
  });
  if (out.size() > static_cast<std::size_t>(cfg.crop_budget)) {
    out.erase(out.begin() + cfg.crop_budget, out.end());
  }
  return out;
}

/// Letterbox transform taking the source rectangle onto a target canvas:
/// uniform scale min(target_w/w, target_h/h), centered padding on the slack
/// axis only.
inline CropPlan plan_crop(const BoundingBox& source, int target_w, int target_h) {
  if (target_w < 1 || target_h < 1) throw std::invalid_argument("plan_crop: target dims must be positive");
  const double sx = target_w / source.w;
  const double sy = target_h / source.h;
  double scale, pad_x, pad_y;
  if (sx <= sy) {
    scale = sx;
    pad_x = 0.0;
    pad_y = std::max(0.0, (target_h - scale * source.h) / 2.0);
  } else {
    scale = sy;
    pad_y = 0.0;
    pad_x = std::max(0.0, (target_w - scale * source.w) / 2.0);
  }
  return CropPlan{source, scale, pad_x, pad_y, target_w, target_h};
}

/// Full proposal output: every merged region, the budget-limited picks, and
/// their crop plans.
struct Proposal {
  std::vector<ClusterRegion> regions;
  std::vector<ClusterRegion> picked;
  std::vector<CropPlan> plans;
};

/// The composed pipeline: binarize, mask, grid densities, top-K, eight-way
/// merge, pixel realization, budget ranking, letterbox planning.
inline Proposal propose(const Heatmap& h, const SCMConfig& cfg, int image_w, int image_h,
                        double binarize_tau = 0.2) {
  cfg.validate();
  const int r = h.downsample;
  if (h.width != (image_w + r - 1) / r || h.height != (image_h + r - 1) / r) {
    throw std::invalid_argument("propose: heatmap dimensions inconsistent with image and downsample");
  }
  const LocationMask mask = binarize(h, binarize_tau);
  const Heatmap masked = apply_mask(h, mask);
  const GridDensities densities = grid_densities(masked, cfg.grid_x, cfg.grid_y);
  const std::vector<GridCell> candidates = select_topk(densities, cfg.top_k);
  const std::vector<std::vector<GridCell>> components = merge_8connected(candidates);

  Proposal result;
  result.regions.reserve(components.size());
  for (const std::vector<GridCell>& comp : components) {
    result.regions.push_back(region_bbox(comp, densities, image_w, image_h, r, cfg.pad));
  }
  result.picked = pick_crops(result.regions, cfg);
  result.plans.reserve(result.picked.size());
  for (const ClusterRegion& region : result.picked) {
    result.plans.push_back(plan_crop(region.bbox_px, cfg.target_w, cfg.target_h));
  }
  return result;
}

}  // namespace scmdet
