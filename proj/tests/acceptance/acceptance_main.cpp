// Acceptance suite: one criterion per entry, one [PASS]/[FAIL] line each.
// Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scmdet/coco_io.hpp"
#include "scmdet/eval.hpp"
#include "scmdet/fusion.hpp"
#include "scmdet/geometry.hpp"
#include "scmdet/heatmap.hpp"
#include "scmdet/rng.hpp"
#include "scmdet/scm.hpp"
#include "scmdet/simulate.hpp"

using namespace scmdet;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kFixtures = SCMDET_FIXTURES_DIR;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::duration<double>>(Clock::now() - t0).count();
}

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool condition, const std::string& what) {
    if (!condition) {
      ok = false;
      detail << (detail.str().empty() ? "" : "; ") << what;
    }
  }
};

// ---------------------------------------------------------------------------
// Frozen outputs of the seed-42 end-to-end simulation, required to reproduce
// exactly on every run. The seed-42 coarse pass happens to detect a single
// vehicle (a ~3% draw), which leaves one cluster invisible to the proposer,
// so the 90% coverage clause cannot hold at this seed; the AP50-gain clause
// still passes. The coverage assertion is kept as stated and reports red.
// ---------------------------------------------------------------------------
constexpr bool kGoldenFrozen = true;
constexpr double kGoldenCoarseAp = 0.01782178217821782;
constexpr double kGoldenCoarseAp50 = 0.019801980198019802;
constexpr double kGoldenCoarseAp75 = 0.019801980198019802;
constexpr double kGoldenFusedAp = 0.10479773252050481;
constexpr double kGoldenFusedAp50 = 0.13861386138613863;
constexpr double kGoldenFusedAp75 = 0.13861386138613863;
constexpr double kGoldenCoverage = 0.17499999999999999;

SceneSpec acceptance_scene() {
  SceneSpec spec;
  spec.image_w = 2000;
  spec.image_h = 1500;
  // Cluster centers sit on proposal-grid window corners so the surrounding
  // windows cover the Gaussian symmetrically.
  spec.clusters = {{624.0, 448.0, 80.0, 40}, {1372.0, 1048.0, 80.0, 40}};
  spec.background_count = 20;
  spec.size_log_mean = std::log(14.0);
  spec.size_log_sigma = 0.4;
  spec.seed = 42;
  return spec;
}

DetectorModel acceptance_detector() {
  DetectorModel model;
  model.s50 = 24.0;
  model.slope = 6.0;
  model.loc_sigma_frac = 0.05;
  model.score_tp_mean = 0.8;
  model.fp_rate_per_megapixel = 2.0;
  model.seed = 42;
  return model;
}

double crop_coverage(const PipelineOutcome& out) {
  int clustered = 0, covered = 0;
  for (std::size_t i = 0; i < out.scene.ground_truth.size(); ++i) {
    if (out.scene.source_cluster[i] < 0) continue;
    ++clustered;
    const double cx = out.scene.ground_truth[i].bbox.center_x();
    const double cy = out.scene.ground_truth[i].bbox.center_y();
    for (const CropPlan& plan : out.proposal.plans) {
      if (cx >= plan.source.x && cx <= plan.source.right() && cy >= plan.source.y &&
          cy <= plan.source.bottom()) {
        ++covered;
        break;
      }
    }
  }
  return clustered == 0 ? 1.0 : static_cast<double>(covered) / clustered;
}

// --------------------------------------------------------------------------

Check criterion_scm_defaults() {
  Check c;
  const SCMConfig cfg;
  c.require(cfg.grid_x == 16 && cfg.grid_y == 10, "grid != (16,10)");
  c.require(cfg.top_k == 30, "top_k != 30");
  c.require(cfg.crop_budget == 2, "crop_budget != 2");
  c.require(cfg.target_w == 1024 && cfg.target_h == 640, "target != 1024x640");
  return c;
}

Check criterion_grid_density_oracle() {
  Check c;
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int w = 16 + static_cast<int>(rng.uniform01() * 49);  // up to 64
    const int h = 10 + static_cast<int>(rng.uniform01() * 31);  // up to 40
    Heatmap hm(w, h, 4);
    for (float& v : hm.values) v = static_cast<float>(rng.uniform01());
    const GridDensities fast = grid_densities(hm, 16, 10);
    for (int j = 0; j < 10; ++j) {
      for (int i = 0; i < 16; ++i) {
        double naive = 0.0;
        for (int y = grid_window_start(j, h, 10); y < grid_window_start(j + 1, h, 10); ++y) {
          for (int x = grid_window_start(i, w, 16); x < grid_window_start(i + 1, w, 16); ++x) {
            naive += static_cast<double>(hm.at(x, y));
          }
        }
        worst = std::max(worst, std::abs(fast.at(i, j) - naive));
      }
    }
  }
  const double elapsed = seconds_since(t0);
  c.detail << "max_abs_err=" << worst << " elapsed=" << elapsed << "s";
  c.require(worst < 1e-6, "max abs error >= 1e-6");
  c.require(elapsed < 10.0, "runtime >= 10s");
  return c;
}

Check criterion_connectivity_oracle() {
  Check c;
  const auto t0 = Clock::now();
  Rng rng(102);
  for (int trial = 0; trial < 1000; ++trial) {
    std::set<std::pair<int, int>> chosen;
    const int n = 1 + static_cast<int>(rng.uniform01() * 60);
    while (static_cast<int>(chosen.size()) < n) {
      chosen.insert({static_cast<int>(rng.uniform01() * 16), static_cast<int>(rng.uniform01() * 10)});
    }
    std::vector<GridCell> cells;
    for (auto [i, j] : chosen) cells.push_back({i, j});

    // Independent flood fill.
    std::set<std::pair<int, int>> remaining;
    for (const GridCell& cell : cells) remaining.insert({cell.j, cell.i});
    std::vector<std::vector<GridCell>> oracle;
    while (!remaining.empty()) {
      std::deque<std::pair<int, int>> queue{*remaining.begin()};
      remaining.erase(remaining.begin());
      std::vector<GridCell> comp;
      while (!queue.empty()) {
        auto [j, i] = queue.front();
        queue.pop_front();
        comp.push_back({i, j});
        for (int dj = -1; dj <= 1; ++dj) {
          for (int di = -1; di <= 1; ++di) {
            auto it = remaining.find({j + dj, i + di});
            if (it != remaining.end()) {
              queue.push_back(*it);
              remaining.erase(it);
            }
          }
        }
      }
      std::sort(comp.begin(), comp.end(), row_major_less);
      oracle.push_back(std::move(comp));
    }
    std::sort(oracle.begin(), oracle.end(),
              [](const std::vector<GridCell>& a, const std::vector<GridCell>& b) {
                return row_major_less(a.front(), b.front());
              });

    const auto merged = merge_8connected(cells);
    if (merged.size() != oracle.size()) {
      c.require(false, "component count mismatch at trial " + std::to_string(trial));
      return c;
    }
    for (std::size_t k = 0; k < merged.size(); ++k) {
      if (!(merged[k] == oracle[k])) {
        c.require(false, "partition mismatch at trial " + std::to_string(trial));
        return c;
      }
    }
  }
  const double elapsed = seconds_since(t0);
  c.detail << "elapsed=" << elapsed << "s";
  c.require(elapsed < 5.0, "runtime >= 5s");
  return c;
}

Check criterion_crop_round_trip() {
  Check c;
  Rng rng(103);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const BoundingBox source(rng.uniform(0, 1000), rng.uniform(0, 800), rng.uniform(40, 1600),
                             rng.uniform(40, 1200));
    const CropPlan plan = plan_crop(source, 1024, 640);
    const double bw = rng.uniform(1.0, source.w / 2);
    const double bh = rng.uniform(1.0, source.h / 2);
    const Detection d{1, 1,
                      BoundingBox(source.x + rng.uniform01() * (source.w - bw),
                                  source.y + rng.uniform01() * (source.h - bh), bw, bh),
                      0.5};
    const auto back = to_global(to_crop(d, plan), plan);
    if (!back) {
      c.require(false, "round trip dropped an in-source box");
      return c;
    }
    worst = std::max({worst, std::abs(back->bbox.x - d.bbox.x), std::abs(back->bbox.y - d.bbox.y),
                      std::abs(back->bbox.w - d.bbox.w), std::abs(back->bbox.h - d.bbox.h)});
  }
  c.detail << "max_coord_err=" << worst;
  c.require(worst < 1e-6, "max coordinate error >= 1e-6");
  return c;
}

Check criterion_geometry_properties() {
  Check c;
  Rng rng(104);
  for (int k = 0; k < 10000; ++k) {
    const BoundingBox a(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(0.1, 50),
                        rng.uniform(0.1, 50));
    const BoundingBox b(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(0.1, 50),
                        rng.uniform(0.1, 50));
    const double i = iou(a, b);
    const double g = giou(a, b);
    if (!(i >= 0.0 && i <= 1.0)) {
      c.require(false, "IoU out of [0,1]");
      return c;
    }
    if (!(g > -1.0 && g <= i)) {
      c.require(false, "GIoU out of (-1, IoU]");
      return c;
    }
    if (std::abs(giou(a, a) - 1.0) > 1e-9) {
      c.require(false, "GIoU(a,a) != 1");
      return c;
    }
    const double dx = rng.uniform(-300, 300), dy = rng.uniform(-300, 300);
    const double s = rng.uniform(0.1, 10.0);
    const BoundingBox at(a.x + dx, a.y + dy, a.w, a.h), bt(b.x + dx, b.y + dy, b.w, b.h);
    const BoundingBox as(a.x * s, a.y * s, a.w * s, a.h * s), bs(b.x * s, b.y * s, b.w * s, b.h * s);
    const double tol_i = 1e-9 * std::max(1.0, std::abs(i));
    const double tol_g = 1e-9 * std::max(1.0, std::abs(g));
    if (std::abs(iou(at, bt) - i) > tol_i || std::abs(iou(as, bs) - i) > tol_i) {
      c.require(false, "IoU not translation/scale invariant");
      return c;
    }
    if (std::abs(giou(at, bt) - g) > tol_g || std::abs(giou(as, bs) - g) > tol_g) {
      c.require(false, "GIoU not translation/scale invariant");
      return c;
    }
  }
  return c;
}

Check criterion_nms_properties() {
  Check c;
  Rng rng(105);
  auto same = [](const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].score != b[i].score || a[i].category_id != b[i].category_id ||
          a[i].bbox.x != b[i].bbox.x || a[i].bbox.y != b[i].bbox.y || a[i].bbox.w != b[i].bbox.w ||
          a[i].bbox.h != b[i].bbox.h) {
        return false;
      }
    }
    return true;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Detection> dets;
    const int n = 1 + static_cast<int>(rng.uniform01() * 50);
    for (int i = 0; i < n; ++i) {
      dets.push_back(Detection{9, 1 + static_cast<int>(rng.uniform01() * 3),
                               BoundingBox(rng.uniform(0, 100), rng.uniform(0, 100),
                                           rng.uniform(5, 40), rng.uniform(5, 40)),
                               rng.uniform01()});
    }
    const auto once = nms(dets, 0.5);
    if (!same(nms(once, 0.5), once)) {
      c.require(false, "NMS not idempotent at trial " + std::to_string(trial));
      return c;
    }
    std::vector<Detection> shuffled = dets;
    for (std::size_t i = shuffled.size(); i > 1; --i) {
      std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(rng.uniform01() * i)]);
    }
    if (!same(nms(shuffled, 0.5), once)) {
      c.require(false, "NMS not permutation invariant at trial " + std::to_string(trial));
      return c;
    }
  }
  return c;
}

int exhaustive_max_matching(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                            double iou_t, std::vector<char>& taken, std::size_t d) {
  if (d == dets.size()) return 0;
  int best = exhaustive_max_matching(dets, gts, iou_t, taken, d + 1);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (taken[g] || iou(dets[d].bbox, gts[g].bbox) < iou_t) continue;
    taken[g] = 1;
    best = std::max(best, 1 + exhaustive_max_matching(dets, gts, iou_t, taken, d + 1));
    taken[g] = 0;
  }
  return best;
}

Check criterion_ap_oracle() {
  Check c;

  // Greedy matching equals the exhaustive TP-maximizing assignment on every
  // shipped small fixture.
  Rng rng(106);
  for (int trial = 0; trial < 400; ++trial) {
    const int n_gt = 1 + static_cast<int>(rng.uniform01() * 3);
    const int n_det = 1 + static_cast<int>(rng.uniform01() * (6 - n_gt));
    std::vector<GroundTruth> gts;
    for (int g = 0; g < n_gt; ++g) {
      gts.push_back(GroundTruth{g + 1, 1, 1,
                                BoundingBox(30.0 * g + rng.uniform(0, 8), rng.uniform(0, 8),
                                            rng.uniform(14, 24), rng.uniform(14, 24))});
    }
    std::vector<Detection> dets;
    for (int d = 0; d < n_det; ++d) {
      const GroundTruth& target = gts[static_cast<std::size_t>(rng.uniform01() * gts.size())];
      dets.push_back(Detection{1, 1,
                               BoundingBox(target.bbox.x + rng.uniform(-4, 4),
                                           target.bbox.y + rng.uniform(-4, 4),
                                           target.bbox.w + rng.uniform(-2, 2),
                                           target.bbox.h + rng.uniform(-2, 2)),
                               rng.uniform01()});
    }
    for (double t : {0.5, 0.75}) {
      int greedy = 0;
      for (const auto& [d, tp] : match_greedy(dets, gts, t)) greedy += tp ? 1 : 0;
      std::vector<char> taken(gts.size(), 0);
      const int oracle = exhaustive_max_matching(dets, gts, t, taken, 0);
      if (greedy != oracle) {
        c.require(false, "greedy != exhaustive at trial " + std::to_string(trial));
        return c;
      }
    }
  }

  // The worked two-detection value.
  c.require(average_precision({1, 0}, 2).value() == 51.0 / 101.0, "[TP,FP]/2 != 51/101");

  // The golden three-image fixture.
  const DatasetBundle bundle = load_dataset(kFixtures + "/golden_eval/annotations.json");
  const std::vector<Detection> dets = load_results(kFixtures + "/golden_eval/results.json");
  const EvalResult r = coco_ap(dets, bundle.annotations, bundle.image_ids(), bundle.category_ids());
  const double x = 61.0 / 101.0, y = 41.0 / 101.0;
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) acc += x;
  for (int i = 0; i < 6; ++i) acc += y;
  c.require(r.ap50 == x, "fixture ap50 != 61/101");
  c.require(r.ap75 == y, "fixture ap75 != 41/101");
  c.require(r.ap == acc / 10.0, "fixture ap != threshold mean");
  c.require(std::abs(r.ap - 49.0 / 101.0) < 1e-12, "fixture ap far from 49/101");
  return c;
}

Check criterion_end_to_end_simulation() {
  Check c;
  const auto t0 = Clock::now();
  const PipelineOutcome out = run_pipeline(acceptance_scene(), acceptance_detector(), SCMConfig{});
  const double elapsed = seconds_since(t0);
  const double coverage = crop_coverage(out);
  const double gain = out.fused_eval.ap50 - out.coarse_only.ap50;

  c.detail.precision(17);
  c.detail << "coarse_ap50=" << out.coarse_only.ap50 << " fused_ap50=" << out.fused_eval.ap50
           << " gain=" << gain << " coverage=" << coverage << " crops=" << out.proposal.plans.size()
           << " elapsed=" << elapsed << "s";

  c.require(gain >= 0.05, "AP50 gain below 5 points");
  c.require(coverage >= 0.90, "crop coverage below 90%");
  c.require(elapsed < 30.0, "runtime >= 30s");

  if (kGoldenFrozen) {
    c.require(out.coarse_only.ap == kGoldenCoarseAp, "coarse ap drifted from golden");
    c.require(out.coarse_only.ap50 == kGoldenCoarseAp50, "coarse ap50 drifted from golden");
    c.require(out.coarse_only.ap75 == kGoldenCoarseAp75, "coarse ap75 drifted from golden");
    c.require(out.fused_eval.ap == kGoldenFusedAp, "fused ap drifted from golden");
    c.require(out.fused_eval.ap50 == kGoldenFusedAp50, "fused ap50 drifted from golden");
    c.require(out.fused_eval.ap75 == kGoldenFusedAp75, "fused ap75 drifted from golden");
    c.require(coverage == kGoldenCoverage, "coverage drifted from golden");
  } else {
    c.detail << " coarse_ap=" << out.coarse_only.ap << " coarse_ap75=" << out.coarse_only.ap75
             << " fused_ap=" << out.fused_eval.ap << " fused_ap75=" << out.fused_eval.ap75;
    c.require(false, "golden numbers not frozen yet");
  }
  return c;
}

Check criterion_negative_control() {
  Check c;
  DetectorModel model = acceptance_detector();
  // Nothing resolution-limited: the 50%-recall size shrinks to a tenth of a
  // pixel. The logistic width shrinks with it, otherwise the curve at slope 6
  // would still suppress small apparent sizes and the control would not
  // isolate the resolution mechanism.
  model.s50 = 0.1;
  model.slope = 0.1;
  const PipelineOutcome out = run_pipeline(acceptance_scene(), model, SCMConfig{});
  const double gain = out.fused_eval.ap50 - out.coarse_only.ap50;
  c.detail.precision(17);
  c.detail << "coarse_ap50=" << out.coarse_only.ap50 << " fused_ap50=" << out.fused_eval.ap50
           << " gain=" << gain;
  c.require(gain < 0.02, "gain >= 2 points without a resolution bottleneck");
  return c;
}

Check criterion_performance() {
  Check c;
  Rng rng(107);
  Heatmap hm(500, 375, 4);
  for (float& v : hm.values) v = static_cast<float>(rng.uniform01());
  double best = 1e9;
  for (int rep = 0; rep < 3; ++rep) {
    const auto t0 = Clock::now();
    const Proposal p = propose(hm, SCMConfig{}, 2000, 1500);
    best = std::min(best, seconds_since(t0));
    if (p.plans.size() > 2) c.require(false, "budget exceeded");
  }
  c.detail << "propose=" << best * 1e3 << "ms";
  c.require(best < 0.050, "SCM proposal >= 50ms");

  const auto t0 = Clock::now();
  (void)run_pipeline(acceptance_scene(), acceptance_detector(), SCMConfig{});
  const double pipeline_s = seconds_since(t0);
  c.detail << " pipeline=" << pipeline_s << "s";
  c.require(pipeline_s < 1.0, "full pipeline >= 1s per image");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria{
      {"scm-defaults", criterion_scm_defaults},
      {"grid-density-oracle", criterion_grid_density_oracle},
      {"connectivity-oracle", criterion_connectivity_oracle},
      {"crop-round-trip", criterion_crop_round_trip},
      {"geometry-properties", criterion_geometry_properties},
      {"nms-properties", criterion_nms_properties},
      {"ap-oracle", criterion_ap_oracle},
      {"end-to-end-simulation", criterion_end_to_end_simulation},
      {"negative-control", criterion_negative_control},
      {"performance", criterion_performance},
  };

  // With an argument, run only the named criterion (one ctest entry each).
  const std::string only = argc > 1 ? argv[1] : "";
  if (only == "--list") {
    for (const auto& [name, fn] : criteria) std::printf("%s\n", name.c_str());
    return 0;
  }

  int failures = 0;
  int ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name != only) continue;
    ++ran;
    Check c;
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail << "exception: " << e.what();
    }
    if (!c.ok) ++failures;
    std::printf("[%s] %-24s %s\n", c.ok ? "PASS" : "FAIL", name.c_str(), c.detail.str().c_str());
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion: %s\n", only.c_str());
    return 2;
  }
  if (only.empty()) {
    std::printf("%d/%d criteria passed\n", ran - failures, ran);
  }
  return failures;
}
