// Command-line front end: crop proposal, detection fusion, COCO evaluation,
// and the simulated end-to-end comparison. All diagnostics go to stderr; data
// goes to files or stdout.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scmdet/coco_io.hpp"
#include "scmdet/eval.hpp"
#include "scmdet/fusion.hpp"
#include "scmdet/geometry.hpp"
#include "scmdet/heatmap.hpp"
#include "scmdet/scm.hpp"
#include "scmdet/simulate.hpp"

namespace {

struct SizeArg {
  int w = 0;
  int h = 0;
};

SizeArg parse_size(const std::string& text, const std::string& flag) {
  const std::size_t pos = text.find('x');
  if (pos == std::string::npos) {
    throw CLI::ValidationError(flag, "expected WxH, e.g. 1024x640");
  }
  SizeArg s;
  try {
    s.w = std::stoi(text.substr(0, pos));
    s.h = std::stoi(text.substr(pos + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError(flag, "expected WxH, e.g. 1024x640");
  }
  if (s.w < 1 || s.h < 1) throw CLI::ValidationError(flag, "dimensions must be positive");
  return s;
}

struct CommonOptions {
  std::string config_path;
  std::string grid;
  std::optional<int> topk;
  std::optional<int> crops;
  std::optional<double> tau;
  std::optional<double> nms_iou;
  std::string target;
  std::optional<double> pad;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "Pipeline config JSON (flags override file values)");
    cmd.add_option("--grid", grid, "Proposal grid as GXxGY (default 16x10)");
    cmd.add_option("--topk", topk, "Number of densest grid cells to keep (default 30)");
    cmd.add_option("--crops", crops, "Crop budget per image; 0 disables cropping (default 2)");
    cmd.add_option("--tau", tau, "Binarization threshold as a fraction of the heatmap max (default 0.2)");
    cmd.add_option("--nms-iou", nms_iou, "Fusion NMS IoU threshold (default 0.5)");
    cmd.add_option("--target", target, "Crop target canvas as WxH (default 1024x640)");
    cmd.add_option("--pad", pad, "Region padding in pixels (default 16)");
  }

  scmdet::PipelineConfig resolve() const {
    scmdet::PipelineConfig cfg;
    if (!config_path.empty()) cfg = scmdet::load_pipeline_config(config_path);
    if (!grid.empty()) {
      const SizeArg g = parse_size(grid, "--grid");
      cfg.scm.grid_x = g.w;
      cfg.scm.grid_y = g.h;
    }
    if (topk) cfg.scm.top_k = *topk;
    if (crops) cfg.scm.crop_budget = *crops;
    if (tau) cfg.heatmap.binarize_threshold = *tau;
    if (nms_iou) cfg.fusion.nms_iou = *nms_iou;
    if (!target.empty()) {
      const SizeArg t = parse_size(target, "--target");
      cfg.scm.target_w = t.w;
      cfg.scm.target_h = t.h;
    }
    if (pad) cfg.scm.pad = *pad;
    cfg.scm.validate();
    cfg.heatmap.validate();
    cfg.fusion.validate();
    return cfg;
  }
};

int cmd_propose(const std::string& heatmap_path, const std::string& detections_path,
                const std::string& image_size, const CommonOptions& opts, const std::string& out_path) {
  if (heatmap_path.empty() == detections_path.empty()) {
    std::cerr << "propose: give exactly one of --heatmap or --detections\n";
    return 2;
  }
  const scmdet::PipelineConfig cfg = opts.resolve();

  std::optional<scmdet::Heatmap> heat;
  int image_w = 0, image_h = 0;
  if (!heatmap_path.empty()) {
    heat = scmdet::load_heatmap(heatmap_path);
    if (!image_size.empty()) {
      const SizeArg s = parse_size(image_size, "--image-size");
      image_w = s.w;
      image_h = s.h;
    } else {
      image_w = heat->width * heat->downsample;
      image_h = heat->height * heat->downsample;
    }
  } else {
    if (image_size.empty()) {
      std::cerr << "propose: --detections requires --image-size\n";
      return 2;
    }
    const SizeArg s = parse_size(image_size, "--image-size");
    image_w = s.w;
    image_h = s.h;
    const std::vector<scmdet::Detection> dets = scmdet::load_results(detections_path);
    for (const scmdet::Detection& d : dets) {
      if (d.image_id != dets.front().image_id) {
        std::cerr << "propose: detections file mixes image ids; proposal is per-image\n";
        return 2;
      }
    }
    heat = scmdet::splat(dets, image_w, image_h, cfg.heatmap);
  }

  const scmdet::Proposal proposal =
      scmdet::propose(*heat, cfg.scm, image_w, image_h, cfg.heatmap.binarize_threshold);
  scmdet::save_plans(proposal.plans, out_path);
  std::cout << "regions=" << proposal.regions.size() << " crops=" << proposal.plans.size() << "\n";
  return 0;
}

int cmd_fuse(const std::string& coarse_path, const std::string& plans_path,
             const std::vector<std::string>& crop_result_paths, const std::string& image_size,
             const CommonOptions& opts, const std::string& out_path) {
  const scmdet::PipelineConfig cfg = opts.resolve();
  const SizeArg s = parse_size(image_size, "--image-size");
  const std::vector<scmdet::CropPlan> plans = scmdet::load_plans(plans_path);
  if (plans.size() != crop_result_paths.size()) {
    std::cerr << "fuse: " << plans.size() << " plans but " << crop_result_paths.size()
              << " --crop-results files; they must pair 1:1\n";
    return 2;
  }
  const std::vector<scmdet::Detection> coarse = scmdet::load_results(coarse_path);
  std::vector<std::pair<scmdet::CropPlan, std::vector<scmdet::Detection>>> fine;
  fine.reserve(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    fine.emplace_back(plans[i], scmdet::load_results(crop_result_paths[i]));
  }
  const std::vector<scmdet::Detection> fused = scmdet::fuse(coarse, fine, cfg.fusion, s.w, s.h);
  scmdet::save_results(fused, out_path);
  std::cout << "coarse=" << coarse.size() << " fused=" << fused.size() << "\n";
  return 0;
}

int cmd_eval(const std::string& results_path, const std::string& annotations_path,
             const std::string& thresholds_csv, const std::string& label, const std::string& out_path) {
  std::vector<double> thresholds = scmdet::coco_thresholds();
  if (!thresholds_csv.empty()) {
    thresholds.clear();
    std::stringstream ss(thresholds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) thresholds.push_back(std::stod(item));
  }
  const scmdet::DatasetBundle bundle = scmdet::load_dataset(annotations_path);
  const std::vector<scmdet::Detection> dets = scmdet::load_results(results_path);
  const scmdet::EvalResult result = scmdet::coco_ap(dets, bundle.annotations, bundle.image_ids(),
                                                    bundle.category_ids(), thresholds);
  std::cout << scmdet::format_eval_table({{label, result}});
  if (!out_path.empty()) {
    scmdet::detail::write_file(out_path, scmdet::eval_to_json(result, /*include_timing=*/false));
  }
  return 0;
}

int cmd_simulate(const std::string& scene_path, const std::string& detector_path,
                 const CommonOptions& opts, std::optional<std::uint64_t> seed,
                 const std::string& out_dir, bool scene_only) {
  const scmdet::PipelineConfig cfg = opts.resolve();
  scmdet::SceneSpec scene_spec = scmdet::scene_from_json(scmdet::detail::parse_file(scene_path));
  scmdet::DetectorModel model = detector_path.empty()
                                    ? scmdet::DetectorModel{}
                                    : scmdet::detector_from_json(scmdet::detail::parse_file(detector_path));
  if (seed) {
    scene_spec.seed = *seed;
    model.seed = *seed;
  }

  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  auto out = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  if (scene_only) {
    const scmdet::Scene scene = scmdet::generate_scene(scene_spec);
    if (out_dir.empty()) {
      std::cerr << "simulate: --scene-only requires --out-dir\n";
      return 2;
    }
    scmdet::save_dataset(scmdet::scene_to_bundle(scene), out("scene.json"));
    std::cout << "vehicles=" << scene.ground_truth.size() << "\n";
    return 0;
  }

  const scmdet::PipelineOutcome outcome =
      scmdet::run_pipeline(scene_spec, model, cfg.scm, cfg.heatmap, cfg.fusion);

  std::cout << scmdet::format_eval_table(
      {{"coarse-only", outcome.coarse_only}, {"scm-fused", outcome.fused_eval}},
      /*with_time=*/true);

  if (!out_dir.empty()) {
    scmdet::save_dataset(scmdet::scene_to_bundle(outcome.scene), out("scene.json"));
    scmdet::save_heatmap(outcome.heatmap, out("heatmap.scmh"));
    scmdet::save_plans(outcome.proposal.plans, out("plans.json"));
    scmdet::save_results(outcome.coarse, out("coarse_results.json"));
    for (std::size_t i = 0; i < outcome.fine.size(); ++i) {
      scmdet::save_results(outcome.fine[i].second, out("crop_results_" + std::to_string(i) + ".json"));
    }
    scmdet::save_results(outcome.fused, out("fused_results.json"));
    // Timing is reported on the table only; written artifacts stay
    // byte-identical across reruns.
    scmdet::detail::write_file(out("eval_coarse.json"),
                               scmdet::eval_to_json(outcome.coarse_only, /*include_timing=*/false));
    scmdet::detail::write_file(out("eval_fused.json"),
                               scmdet::eval_to_json(outcome.fused_eval, /*include_timing=*/false));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crop proposal, fusion, and COCO evaluation toolkit for dense small-object scenes"};
  app.require_subcommand(1);

  // propose
  auto* propose = app.add_subcommand("propose", "Propose dense-region crops from a heatmap or detections");
  std::string p_heatmap, p_detections, p_image_size, p_out = "plans.json";
  CommonOptions p_opts;
  propose->add_option("--heatmap", p_heatmap, "Heatmap file (SCMH binary)");
  propose->add_option("--detections", p_detections, "COCO results JSON to splat into a heatmap");
  propose->add_option("--image-size", p_image_size, "Original image size WxH");
  propose->add_option("--out", p_out, "Output crop-plans JSON path");
  p_opts.add_to(*propose);

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Merge coarse and per-crop detections");
  std::string f_coarse, f_plans, f_image_size, f_out = "fused.json";
  std::vector<std::string> f_crop_results;
  CommonOptions f_opts;
  fuse->add_option("--coarse", f_coarse, "Coarse-pass COCO results JSON")->required();
  fuse->add_option("--plans", f_plans, "Crop-plans JSON")->required();
  fuse->add_option("--crop-results", f_crop_results, "Per-crop COCO results JSON, one per plan");
  fuse->add_option("--image-size", f_image_size, "Original image size WxH")->required();
  fuse->add_option("--out", f_out, "Output fused results path");
  f_opts.add_to(*fuse);

  // eval
  auto* eval = app.add_subcommand("eval", "COCO-protocol AP evaluation");
  std::string e_results, e_annotations, e_thresholds, e_label = "results", e_out;
  eval->add_option("--results", e_results, "COCO results JSON")->required();
  eval->add_option("--annotations", e_annotations, "COCO annotations JSON")->required();
  eval->add_option("--thresholds", e_thresholds, "Comma-separated IoU thresholds (default 0.50:0.05:0.95)");
  eval->add_option("--label", e_label, "Row label for the printed table");
  eval->add_option("--out", e_out, "Write the evaluation JSON here");

  // simulate / pipeline
  const auto add_sim = [&](const char* name, const char* desc) {
    auto* cmd = app.add_subcommand(name, desc);
    return cmd;
  };
  std::string s_scene, s_detector, s_out_dir;
  std::optional<std::uint64_t> s_seed;
  bool s_scene_only = false;
  CommonOptions s_opts;
  auto* simulate = add_sim("simulate", "Run the simulated coarse-vs-fused comparison");
  auto* pipeline = add_sim("pipeline", "Alias of simulate: full synthetic pipeline comparison");
  for (auto* cmd : {simulate, pipeline}) {
    cmd->add_option("--scene", s_scene, "Scene spec JSON")->required();
    cmd->add_option("--detector", s_detector, "Detector model JSON (defaults when omitted)");
    cmd->add_option("--seed", s_seed, "Override scene and detector seeds");
    cmd->add_option("--out-dir", s_out_dir, "Directory for intermediate artifacts");
    if (cmd == simulate) {
      cmd->add_flag("--scene-only", s_scene_only, "Only generate and export the scene");
    }
    s_opts.add_to(*cmd);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (propose->parsed()) return cmd_propose(p_heatmap, p_detections, p_image_size, p_opts, p_out);
    if (fuse->parsed()) return cmd_fuse(f_coarse, f_plans, f_crop_results, f_image_size, f_opts, f_out);
    if (eval->parsed()) return cmd_eval(e_results, e_annotations, e_thresholds, e_label, e_out);
    if (simulate->parsed() || pipeline->parsed()) {
      return cmd_simulate(s_scene, s_detector, s_opts, s_seed, s_out_dir, s_scene_only);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
