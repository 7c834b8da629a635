#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scmdet/eval.hpp"
#include "scmdet/fusion.hpp"
#include "scmdet/geometry.hpp"
#include "scmdet/scm.hpp"
#include "scmdet/simulate.hpp"

namespace scmdet {

using json = nlohmann::json;

/// In-memory mirror of the COCO annotation subset this toolkit reads:
/// images[{id,width,height,file_name}], annotations[{id,image_id,category_id,
/// bbox:[x,y,w,h]}], categories[{id,name}]. Unknown fields are ignored.
struct DatasetBundle {
  struct Image {
    ImageId id;
    int width;
    int height;
    std::string file_name;
  };
  struct Category {
    int id;
    std::string name;
  };

  std::vector<Image> images;
  std::vector<GroundTruth> annotations;
  std::vector<Category> categories;

  std::vector<ImageId> image_ids() const {
    std::vector<ImageId> ids;
    ids.reserve(images.size());
    for (const Image& im : images) ids.push_back(im.id);
    return ids;
  }

  std::vector<int> category_ids() const {
    std::vector<int> ids;
    ids.reserve(categories.size());
    for (const Category& c : categories) ids.push_back(c.id);
    return ids;
  }
};

namespace detail {

inline json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": malformed JSON: " + e.what());
  }
  return j;
}

inline void write_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

inline BoundingBox parse_bbox(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.size() != 4) {
    throw std::runtime_error(where + ": bbox must be an array of four numbers");
  }
  const double x = arr[0].get<double>();
  const double y = arr[1].get<double>();
  const double w = arr[2].get<double>();
  const double h = arr[3].get<double>();
  if (!(w > 0.0 && h > 0.0) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(w) ||
      !std::isfinite(h)) {
    throw std::runtime_error(where + ": nonpositive or non-finite box dimensions");
  }
  return BoundingBox(x, y, w, h);
}

}  // namespace detail

/// Reads and referentially validates a COCO-subset annotation file.
inline DatasetBundle load_dataset(const std::string& path) {
  const json j = detail::parse_file(path);
  DatasetBundle bundle;

  for (const json& im : j.value("images", json::array())) {
    bundle.images.push_back(DatasetBundle::Image{im.at("id").get<ImageId>(),
                                                 im.value("width", 0), im.value("height", 0),
                                                 im.value("file_name", std::string())});
  }
  for (const json& c : j.value("categories", json::array())) {
    bundle.categories.push_back(
        DatasetBundle::Category{c.at("id").get<int>(), c.value("name", std::string())});
  }
  std::unordered_set<ImageId> image_ids;
  for (const auto& im : bundle.images) image_ids.insert(im.id);
  std::unordered_set<int> category_ids;
  for (const auto& c : bundle.categories) category_ids.insert(c.id);

  for (const json& a : j.value("annotations", json::array())) {
    const std::int64_t id = a.at("id").get<std::int64_t>();
    const std::string where = path + ": annotation " + std::to_string(id);
    const ImageId image_id = a.at("image_id").get<ImageId>();
    const int category_id = a.at("category_id").get<int>();
    if (!image_ids.count(image_id)) {
      throw std::runtime_error(where + " references missing image_id " + std::to_string(image_id));
    }
    if (!category_ids.count(category_id)) {
      throw std::runtime_error(where + " references missing category_id " + std::to_string(category_id));
    }
    bundle.annotations.push_back(
        GroundTruth{id, image_id, category_id, detail::parse_bbox(a.at("bbox"), where)});
  }
  return bundle;
}

inline void save_dataset(const DatasetBundle& bundle, const std::string& path) {
  json j;
  j["images"] = json::array();
  for (const auto& im : bundle.images) {
    j["images"].push_back({{"id", im.id}, {"width", im.width}, {"height", im.height},
                           {"file_name", im.file_name}});
  }
  j["annotations"] = json::array();
  for (const GroundTruth& g : bundle.annotations) {
    j["annotations"].push_back({{"id", g.annotation_id},
                                {"image_id", g.image_id},
                                {"category_id", g.category_id},
                                {"bbox", {g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h}}});
  }
  j["categories"] = json::array();
  for (const auto& c : bundle.categories) {
    j["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  detail::write_file(path, j);
}

/// COCO results array: [{image_id, category_id, bbox:[x,y,w,h], score}].
inline std::vector<Detection> load_results(const std::string& path) {
  const json j = detail::parse_file(path);
  if (!j.is_array()) throw std::runtime_error(path + ": results file must be a JSON array");
  std::vector<Detection> dets;
  dets.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& entry = j[i];
    const std::string where = path + ": result " + std::to_string(i);
    const double score = entry.at("score").get<double>();
    if (!(score >= 0.0 && score <= 1.0)) throw std::runtime_error(where + ": score outside [0,1]");
    dets.push_back(Detection{entry.at("image_id").get<ImageId>(), entry.at("category_id").get<int>(),
                             detail::parse_bbox(entry.at("bbox"), where), score});
  }
  return dets;
}

inline void save_results(const std::vector<Detection>& dets, const std::string& path) {
  json j = json::array();
  for (const Detection& d : dets) {
    j.push_back({{"image_id", d.image_id},
                 {"category_id", d.category_id},
                 {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
                 {"score", d.score}});
  }
  detail::write_file(path, j);
}

/// Crop plans: [{source:[x,y,w,h], scale, pad_x, pad_y, target:[w,h]}].
inline json plans_to_json(const std::vector<CropPlan>& plans) {
  json j = json::array();
  for (const CropPlan& p : plans) {
    j.push_back({{"source", {p.source.x, p.source.y, p.source.w, p.source.h}},
                 {"scale", p.scale},
                 {"pad_x", p.pad_x},
                 {"pad_y", p.pad_y},
                 {"target", {p.target_w, p.target_h}}});
  }
  return j;
}

inline void save_plans(const std::vector<CropPlan>& plans, const std::string& path) {
  detail::write_file(path, plans_to_json(plans));
}

inline std::vector<CropPlan> load_plans(const std::string& path) {
  const json j = detail::parse_file(path);
  if (!j.is_array()) throw std::runtime_error(path + ": plans file must be a JSON array");
  std::vector<CropPlan> plans;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& entry = j[i];
    const std::string where = path + ": plan " + std::to_string(i);
    CropPlan p{detail::parse_bbox(entry.at("source"), where), entry.at("scale").get<double>(),
               entry.at("pad_x").get<double>(), entry.at("pad_y").get<double>(),
               entry.at("target").at(0).get<int>(), entry.at("target").at(1).get<int>()};
    if (!(p.scale > 0.0) || p.pad_x < 0.0 || p.pad_y < 0.0 || p.target_w < 1 || p.target_h < 1) {
      throw std::runtime_error(where + ": invalid plan parameters");
    }
    if (std::abs(p.scale * p.source.w + 2.0 * p.pad_x - p.target_w) > 1.0 ||
        std::abs(p.scale * p.source.h + 2.0 * p.pad_y - p.target_h) > 1.0 ||
        std::min(p.pad_x, p.pad_y) > 1e-6) {
      throw std::runtime_error(where + ": plan does not describe a letterbox transform");
    }
    plans.push_back(p);
  }
  return plans;
}

inline json eval_to_json(const EvalResult& r, bool include_timing = true) {
  json per_category = json::object();
  for (const auto& [cat, v] : r.per_category) {
    per_category[std::to_string(cat)] = {{"ap", v.ap}, {"ap50", v.ap50}, {"ap75", v.ap75}};
  }
  json j{{"ap", r.ap}, {"ap50", r.ap50}, {"ap75", r.ap75}, {"per_category", per_category}};
  if (include_timing) j["per_image_seconds"] = r.per_image_seconds;
  return j;
}

inline EvalResult eval_from_json(const json& j) {
  EvalResult r;
  r.ap = j.at("ap").get<double>();
  r.ap50 = j.at("ap50").get<double>();
  r.ap75 = j.at("ap75").get<double>();
  for (const auto& [key, v] : j.at("per_category").items()) {
    r.per_category[std::stoi(key)] =
        CategoryAp{v.at("ap").get<double>(), v.at("ap50").get<double>(), v.at("ap75").get<double>()};
  }
  r.per_image_seconds = j.value("per_image_seconds", 0.0);
  return r;
}

/// Aligned text table with AP values in percent, one row per method.
inline std::string format_eval_table(const std::vector<std::pair<std::string, EvalResult>>& rows,
                                     bool with_time = false) {
  std::size_t label_w = 6;
  for (const auto& [label, r] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream out;
  out << std::left;
  out.width(static_cast<std::streamsize>(label_w + 2));
  out << "Method";
  out << std::right << std::fixed << std::setprecision(1);
  out.width(7);
  out << "AP";
  out.width(7);
  out << "AP50";
  out.width(7);
  out << "AP75";
  if (with_time) {
    out.width(10);
    out << "s/img";
  }
  out << '\n';
  for (const auto& [label, r] : rows) {
    out << std::left;
    out.width(static_cast<std::streamsize>(label_w + 2));
    out << label;
    out << std::right << std::setprecision(1);
    out.width(7);
    out << 100.0 * r.ap;
    out.width(7);
    out << 100.0 * r.ap50;
    out.width(7);
    out << 100.0 * r.ap75;
    if (with_time) {
      out << std::setprecision(4);
      out.width(10);
      out << r.per_image_seconds;
    }
    out << '\n';
  }
  return out.str();
}

inline SceneSpec scene_from_json(const json& j) {
  SceneSpec spec;
  spec.image_w = j.value("image_w", spec.image_w);
  spec.image_h = j.value("image_h", spec.image_h);
  for (const json& c : j.value("clusters", json::array())) {
    spec.clusters.push_back(SceneSpec::Cluster{c.at("center").at(0).get<double>(),
                                               c.at("center").at(1).get<double>(),
                                               c.at("spread_sigma").get<double>(),
                                               c.at("count").get<int>()});
  }
  spec.background_count = j.value("background_count", spec.background_count);
  spec.size_log_mean = j.value("size_log_mean", spec.size_log_mean);
  spec.size_log_sigma = j.value("size_log_sigma", spec.size_log_sigma);
  spec.aspect_min = j.value("aspect_min", spec.aspect_min);
  spec.aspect_max = j.value("aspect_max", spec.aspect_max);
  spec.seed = j.value("seed", spec.seed);
  spec.validate();
  return spec;
}

inline DetectorModel detector_from_json(const json& j) {
  DetectorModel model;
  model.s50 = j.value("s50", model.s50);
  model.slope = j.value("slope", model.slope);
  model.loc_sigma_frac = j.value("loc_sigma_frac", model.loc_sigma_frac);
  model.score_tp_mean = j.value("score_tp_mean", model.score_tp_mean);
  model.fp_rate_per_megapixel = j.value("fp_rate_per_megapixel", model.fp_rate_per_megapixel);
  model.seed = j.value("seed", model.seed);
  model.validate();
  return model;
}

/// Whole-pipeline configuration file: {scm:{...}, heatmap:{...}, fusion:{...},
/// eval:{thresholds:[...]}}; every section and key optional.
struct PipelineConfig {
  SCMConfig scm;
  HeatmapConfig heatmap;
  FusionConfig fusion;
  std::vector<double> thresholds = coco_thresholds();
};

inline PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig cfg;
  if (j.contains("scm")) {
    const json& s = j.at("scm");
    cfg.scm.grid_x = s.value("grid_x", cfg.scm.grid_x);
    cfg.scm.grid_y = s.value("grid_y", cfg.scm.grid_y);
    cfg.scm.top_k = s.value("top_k", cfg.scm.top_k);
    cfg.scm.crop_budget = s.value("crop_budget", cfg.scm.crop_budget);
    cfg.scm.pad = s.value("pad", cfg.scm.pad);
    cfg.scm.target_w = s.value("target_w", cfg.scm.target_w);
    cfg.scm.target_h = s.value("target_h", cfg.scm.target_h);
    cfg.scm.min_region_cells = s.value("min_region_cells", cfg.scm.min_region_cells);
  }
  if (j.contains("heatmap")) {
    const json& h = j.at("heatmap");
    cfg.heatmap.downsample = h.value("downsample", cfg.heatmap.downsample);
    cfg.heatmap.gaussian_sigma_divisor = h.value("gaussian_sigma_divisor", cfg.heatmap.gaussian_sigma_divisor);
    cfg.heatmap.binarize_threshold = h.value("binarize_threshold", cfg.heatmap.binarize_threshold);
  }
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    cfg.fusion.nms_iou = f.value("nms_iou", cfg.fusion.nms_iou);
    cfg.fusion.boundary_margin = f.value("boundary_margin", cfg.fusion.boundary_margin);
  }
  if (j.contains("eval") && j.at("eval").contains("thresholds")) {
    cfg.thresholds = j.at("eval").at("thresholds").get<std::vector<double>>();
    for (std::size_t i = 0; i + 1 < cfg.thresholds.size(); ++i) {
      if (!(cfg.thresholds[i] < cfg.thresholds[i + 1])) {
        throw std::runtime_error("config: eval.thresholds must be strictly ascending");
      }
    }
    for (double t : cfg.thresholds) {
      if (!(t >= 0.0 && t <= 1.0)) throw std::runtime_error("config: eval.thresholds must lie in [0,1]");
    }
  }
  cfg.scm.validate();
  cfg.heatmap.validate();
  cfg.fusion.validate();
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(detail::parse_file(path));
}

/// Exports a generated scene as a COCO annotation file (single image, single
/// category) so the rest of the pipeline treats simulation and real data
/// identically.
inline DatasetBundle scene_to_bundle(const Scene& scene) {
  DatasetBundle bundle;
  bundle.images.push_back(DatasetBundle::Image{1, scene.image_w, scene.image_h, "simulated.jpg"});
  bundle.categories.push_back(DatasetBundle::Category{1, "car"});
  bundle.annotations = scene.ground_truth;
  return bundle;
}

}  // namespace scmdet
