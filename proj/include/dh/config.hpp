#pragma once

#include <string>

#include <json.hpp>

#include "dh/attack.hpp"
#include "dh/geometry.hpp"
#include "dh/scene.hpp"
#include "dh/trainer.hpp"

namespace dh {

struct SceneSpec {
  std::string kind = "synthetic";  // synthetic | files
  double plane_depth = 10.8;       // meters
  // When spread differently, each background draws its plane depth uniformly
  // from [plane_depth_min, plane_depth_max]; both default to plane_depth.
  double plane_depth_min = 0.0, plane_depth_max = 0.0;
  double texture_scale = 0.7;      // meters per texture knot
  int64_t n_backgrounds = 4;       // training pool
  int64_t n_eval_backgrounds = 4;  // held-out eval pool
  double baseline = 0.54;          // stereo baseline, meters
  std::string dir;                 // files kind: directory of scene pairs
};

struct BoardSpec {
  std::string kind = "synthetic";  // synthetic | files
  int64_t width_px = 40, height_px = 40;
  double physical_w = 2.0, physical_h = 2.0;
  // Synthetic training pool size. Board 0 (the attack target) keeps the
  // configured physical size; the others vary texture and size so projected
  // extent alone cannot predict depth.
  int64_t count = 4;
  std::string image, mask;  // files kind
};

struct ExperimentConfig {
  uint64_t seed = 1;
  CameraIntrinsics camera{100.0, 100.0, 31.5, 23.5, 64, 48};
  SceneSpec scene;
  BoardSpec board;
  PlacementSampler train_sampler{5.0, 10.0, -M_PI / 6, M_PI / 6};
  PlacementSampler eval_sampler{5.0, 30.0, -M_PI / 6, M_PI / 6};
  TrainConfig train;
  std::string train_ref_checkpoint;  // sup_pseudo reference; empty = initial
  AttackConfig attack;               // standalone attack / evaluation attack
  int64_t eval_n = 100;
  double min_depth = 0.1, max_depth = 100.0;  // disparity head range

  void validate() const;
};

// Parses .toml (a small subset: tables, dotted table headers, scalars and
// flat arrays) or .json by extension. ConfigError messages name the field.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// Runtime objects assembled from a validated config.
struct Experiment {
  ExperimentConfig cfg;
  ScenePool train_pool;
  ScenePool eval_pool;
};

Experiment build_experiment(const ExperimentConfig& cfg);

// Exposed for tests.
nlohmann::json parse_toml_subset(std::istream& in, const std::string& name);

}  // namespace dh
