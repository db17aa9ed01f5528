#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sodm/model.hpp"
#include "sodm/synth.hpp"

namespace sodm {

// One JSON document drives a run: model flags/dims, optimizer, data source
// (a dataset directory or an inline scene recipe), and eval thresholds.
// Unknown keys are errors so typos in ablation scripts surface immediately.
struct RunConfig {
  ModelConfig model;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int iterations = 800;
  uint64_t seed = 42;
  std::string data_dir;       // used when non-empty
  SceneSpec scene;            // otherwise: `scene_count` scenes, seeds scene.seed + i
  int scene_count = 0;
  double score_thresh = 0.3;
  double nms_iou = 0.5;

  void validate() const {
    model.validate();
    if (learning_rate <= 0 || momentum < 0 || momentum >= 1 || iterations < 0)
      throw ConfigError("optimizer fields out of range");
    if (score_thresh < 0 || score_thresh > 1 || nms_iou <= 0 || nms_iou > 1)
      throw ConfigError("eval thresholds out of range");
    if (data_dir.empty()) scene.validate();
  }
};

namespace config_detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + context);
  }
}

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using config_detail::check_keys;
  using config_detail::read_if;
  check_keys(j, {"model", "optimizer", "data", "eval"}, "config root");
  RunConfig cfg;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m,
               {"use_slpa", "use_msfem", "use_align", "stem_width", "widths", "pyramid_width",
                "num_classes"},
               "model");
    read_if(m, "use_slpa", cfg.model.use_slpa);
    read_if(m, "use_msfem", cfg.model.use_msfem);
    read_if(m, "use_align", cfg.model.use_align);
    read_if(m, "stem_width", cfg.model.stem_width);
    if (m.contains("widths")) {
      auto v = m.at("widths").get<std::vector<int>>();
      if (v.size() != 4) throw ConfigError("model.widths must list exactly 4 stage widths");
      for (int i = 0; i < 4; ++i) cfg.model.widths[i] = v[i];
    }
    read_if(m, "pyramid_width", cfg.model.pyramid_width);
    read_if(m, "num_classes", cfg.model.num_classes);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, {"learning_rate", "momentum", "iterations", "seed"}, "optimizer");
    read_if(o, "learning_rate", cfg.learning_rate);
    read_if(o, "momentum", cfg.momentum);
    read_if(o, "iterations", cfg.iterations);
    read_if(o, "seed", cfg.seed);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, {"dir", "scene"}, "data");
    read_if(d, "dir", cfg.data_dir);
    if (d.contains("scene")) {
      const auto& s = d.at("scene");
      check_keys(s,
                 {"height", "width", "num_objects", "size_min", "size_max", "num_clusters",
                  "cluster_spread", "num_classes", "seed", "count"},
                 "data.scene");
      read_if(s, "height", cfg.scene.height);
      read_if(s, "width", cfg.scene.width);
      read_if(s, "num_objects", cfg.scene.num_objects);
      read_if(s, "size_min", cfg.scene.size_min);
      read_if(s, "size_max", cfg.scene.size_max);
      read_if(s, "num_clusters", cfg.scene.num_clusters);
      read_if(s, "cluster_spread", cfg.scene.cluster_spread);
      read_if(s, "num_classes", cfg.scene.num_classes);
      read_if(s, "seed", cfg.scene.seed);
      read_if(s, "count", cfg.scene_count);
    }
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"score_thresh", "nms_iou"}, "eval");
    read_if(e, "score_thresh", cfg.score_thresh);
    read_if(e, "nms_iou", cfg.nms_iou);
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"] = {{"use_slpa", cfg.model.use_slpa},
                {"use_msfem", cfg.model.use_msfem},
                {"use_align", cfg.model.use_align},
                {"stem_width", cfg.model.stem_width},
                {"widths", cfg.model.widths},
                {"pyramid_width", cfg.model.pyramid_width},
                {"num_classes", cfg.model.num_classes}};
  j["optimizer"] = {{"learning_rate", cfg.learning_rate},
                    {"momentum", cfg.momentum},
                    {"iterations", cfg.iterations},
                    {"seed", cfg.seed}};
  if (!cfg.data_dir.empty()) {
    j["data"] = {{"dir", cfg.data_dir}};
  } else {
    j["data"] = {{"scene",
                  {{"height", cfg.scene.height},
                   {"width", cfg.scene.width},
                   {"num_objects", cfg.scene.num_objects},
                   {"size_min", cfg.scene.size_min},
                   {"size_max", cfg.scene.size_max},
                   {"num_clusters", cfg.scene.num_clusters},
                   {"cluster_spread", cfg.scene.cluster_spread},
                   {"num_classes", cfg.scene.num_classes},
                   {"seed", cfg.scene.seed},
                   {"count", cfg.scene_count}}}};
  }
  j["eval"] = {{"score_thresh", cfg.score_thresh}, {"nms_iou", cfg.nms_iou}};
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

// Items described by the config: either loaded from disk or generated
// in-memory from the inline scene recipe (seeds scene.seed + index).
inline std::vector<DatasetItem> config_dataset(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) return load_dataset(cfg.data_dir);
  std::vector<DatasetItem> items;
  for (int i = 0; i < cfg.scene_count; ++i) {
    SceneSpec s = cfg.scene;
    s.seed = cfg.scene.seed + static_cast<uint64_t>(i);
    Scene scene = generate_scene(s);
    DatasetItem item;
    item.image = scene.image_tensor();
    item.gts = scene.gts;
    for (auto& g : item.gts) g.image_id = i;
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace sodm
