#include "dh/config.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dh {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

nlohmann::json parse_scalar(const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError(where + ": empty value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"')
      throw ConfigError(where + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  try {
    size_t used = 0;
    if (v.find_first_of(".eE") == std::string::npos &&
        v.find("inf") == std::string::npos) {
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(where + ": cannot parse value '" + v + "'");
}

std::vector<std::string> split_dotted(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, '.')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty key segment in '" + s + "'");
    parts.push_back(item);
  }
  return parts;
}

}  // namespace

nlohmann::json parse_toml_subset(std::istream& in, const std::string& name) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      const bool array_table = line.size() > 1 && line[1] == '[';
      const size_t close = line.find(array_table ? "]]" : "]");
      if (close == std::string::npos)
        throw ConfigError(where + ": unterminated table header");
      const std::string path =
          trim(line.substr(array_table ? 2 : 1, close - (array_table ? 2 : 1)));
      nlohmann::json* node = &root;
      for (const std::string& seg : split_dotted(path)) {
        if (!node->contains(seg)) (*node)[seg] = nlohmann::json::object();
        node = &(*node)[seg];
        if (node->is_array()) node = &node->back();
      }
      if (array_table) {
        if (!node->is_array()) *node = nlohmann::json::array();
        node->push_back(nlohmann::json::object());
        table = &node->back();
      } else {
        table = node;
      }
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']')
        throw ConfigError(where + ": unterminated array");
      nlohmann::json arr = nlohmann::json::array();
      std::string inner = value.substr(1, value.size() - 2);
      std::stringstream ss(inner);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        arr.push_back(parse_scalar(item, where));
      }
      (*table)[key] = arr;
    } else {
      (*table)[key] = parse_scalar(value, where);
    }
  }
  return root;
}

namespace {

template <typename T>
T fetch(const nlohmann::json& j, const std::string& path, T fallback) {
  const nlohmann::json* node = &j;
  for (const std::string& seg : split_dotted(path)) {
    if (!node->is_object() || !node->contains(seg)) return fallback;
    node = &(*node)[seg];
  }
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + " has the wrong type");
  }
}

double deg2rad(double d) { return d * M_PI / 180.0; }

AttackConfig attack_from_json(const nlohmann::json& j, const std::string& path,
                              const AttackConfig& defaults) {
  AttackConfig a = defaults;
  a.kind = attack_kind_from_string(
      fetch<std::string>(j, path + ".kind", to_string(defaults.kind)));
  a.epsilon = fetch<double>(j, path + ".epsilon", defaults.epsilon);
  a.steps = fetch<int64_t>(j, path + ".steps", defaults.steps);
  a.lr = fetch<double>(j, path + ".lr", defaults.lr);
  a.eot_samples =
      fetch<int64_t>(j, path + ".eot_samples", defaults.eot_samples);
  a.seed = fetch<uint64_t>(j, path + ".seed", defaults.seed);
  return a;
}

PlacementSampler sampler_from_json(const nlohmann::json& j,
                                   const std::string& path,
                                   const PlacementSampler& defaults) {
  PlacementSampler s = defaults;
  s.z_min = fetch<double>(j, path + ".z_min", defaults.z_min);
  s.z_max = fetch<double>(j, path + ".z_max", defaults.z_max);
  s.alpha_min = deg2rad(fetch<double>(j, path + ".angle_min_deg",
                                      defaults.alpha_min * 180.0 / M_PI));
  s.alpha_max = deg2rad(fetch<double>(j, path + ".angle_max_deg",
                                      defaults.alpha_max * 180.0 / M_PI));
  return s;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.seed = fetch<uint64_t>(j, "seed", c.seed);

  c.camera.width = fetch<int64_t>(j, "camera.width", c.camera.width);
  c.camera.height = fetch<int64_t>(j, "camera.height", c.camera.height);
  c.camera.fx = fetch<double>(j, "camera.fx", c.camera.fx);
  c.camera.fy = fetch<double>(j, "camera.fy", c.camera.fy);
  c.camera.cx = fetch<double>(j, "camera.cx",
                              static_cast<double>(c.camera.width - 1) / 2.0);
  c.camera.cy = fetch<double>(j, "camera.cy",
                              static_cast<double>(c.camera.height - 1) / 2.0);

  c.scene.kind = fetch<std::string>(j, "scene.kind", c.scene.kind);
  c.scene.plane_depth = fetch<double>(j, "scene.plane_depth",
                                      c.scene.plane_depth);
  c.scene.plane_depth_min =
      fetch<double>(j, "scene.plane_depth_min", c.scene.plane_depth);
  c.scene.plane_depth_max =
      fetch<double>(j, "scene.plane_depth_max", c.scene.plane_depth);
  c.scene.texture_scale =
      fetch<double>(j, "scene.texture_scale", c.scene.texture_scale);
  c.scene.n_backgrounds =
      fetch<int64_t>(j, "scene.n_backgrounds", c.scene.n_backgrounds);
  c.scene.n_eval_backgrounds = fetch<int64_t>(j, "scene.n_eval_backgrounds",
                                              c.scene.n_eval_backgrounds);
  c.scene.baseline = fetch<double>(j, "scene.baseline", c.scene.baseline);
  c.scene.dir = fetch<std::string>(j, "scene.dir", c.scene.dir);

  c.board.kind = fetch<std::string>(j, "board.kind", c.board.kind);
  c.board.width_px = fetch<int64_t>(j, "board.width_px", c.board.width_px);
  c.board.height_px = fetch<int64_t>(j, "board.height_px", c.board.height_px);
  c.board.physical_w =
      fetch<double>(j, "board.physical_w", c.board.physical_w);
  c.board.physical_h =
      fetch<double>(j, "board.physical_h", c.board.physical_h);
  c.board.count = fetch<int64_t>(j, "board.count", c.board.count);
  c.board.image = fetch<std::string>(j, "board.image", c.board.image);
  c.board.mask = fetch<std::string>(j, "board.mask", c.board.mask);

  c.train_sampler = sampler_from_json(j, "sampler", c.train_sampler);
  c.eval_sampler = sampler_from_json(j, "eval_sampler", c.eval_sampler);

  c.train.mode = train_mode_from_string(
      fetch<std::string>(j, "train.mode", to_string(c.train.mode)));
  c.train.steps = fetch<int64_t>(j, "train.steps", c.train.steps);
  c.train.batch_size =
      fetch<int64_t>(j, "train.batch_size", c.train.batch_size);
  c.train.lr = fetch<double>(j, "train.lr", c.train.lr);
  c.train.pe_alpha = fetch<double>(j, "train.pe_alpha", c.train.pe_alpha);
  c.train.checkpoint_every =
      fetch<int64_t>(j, "train.checkpoint_every", c.train.checkpoint_every);
  c.train.seed = fetch<uint64_t>(j, "train.seed", c.seed);
  c.train_ref_checkpoint =
      fetch<std::string>(j, "train.ref_checkpoint", c.train_ref_checkpoint);
  AttackConfig train_attack_default;
  train_attack_default.steps = 10;
  train_attack_default.lr = 0.1;
  train_attack_default.seed = c.seed;
  c.train.attack = attack_from_json(j, "train.attack", train_attack_default);

  AttackConfig attack_default = c.attack;
  attack_default.seed = c.seed;
  c.attack = attack_from_json(j, "attack", attack_default);
  c.eval_n = fetch<int64_t>(j, "eval.n", c.eval_n);
  c.min_depth = fetch<double>(j, "depth.min_depth", c.min_depth);
  c.max_depth = fetch<double>(j, "depth.max_depth", c.max_depth);
  return c;
}

void ExperimentConfig::validate() const {
  camera.validate();
  if (camera.width % 8 != 0 || camera.height % 8 != 0)
    throw ConfigError("camera.width/height must be divisible by 8");
  if (scene.kind != "synthetic" && scene.kind != "files")
    throw ConfigError("scene.kind must be synthetic|files");
  if (scene.kind == "synthetic") {
    if (scene.plane_depth <= 0.0)
      throw ConfigError("scene.plane_depth must be positive");
    if (!(scene.plane_depth_min > 0.0) ||
        scene.plane_depth_min > scene.plane_depth_max)
      throw ConfigError(
          "scene.plane_depth_min/max must satisfy 0 < min <= max");
    if (scene.texture_scale <= 0.0)
      throw ConfigError("scene.texture_scale must be positive");
    if (scene.n_backgrounds < 1 || scene.n_eval_backgrounds < 1)
      throw ConfigError("scene.n_backgrounds must be >= 1");
    if (scene.baseline == 0.0)
      throw ConfigError("scene.baseline must be nonzero");
  } else {
    if (scene.dir.empty()) throw ConfigError("scene.dir is required");
    if (!std::filesystem::is_directory(scene.dir))
      throw ConfigError("scene.dir does not exist: " + scene.dir);
  }
  if (board.kind != "synthetic" && board.kind != "files")
    throw ConfigError("board.kind must be synthetic|files");
  if (board.kind == "synthetic") {
    if (board.width_px < 4 || board.height_px < 4)
      throw ConfigError("board.width_px/height_px must be >= 4");
    if (board.physical_w <= 0.0 || board.physical_h <= 0.0)
      throw ConfigError("board.physical_w/physical_h must be positive");
    if (board.count < 1) throw ConfigError("board.count must be >= 1");
  } else {
    if (!std::filesystem::exists(board.image))
      throw ConfigError("board.image does not exist: " + board.image);
    if (!std::filesystem::exists(board.mask))
      throw ConfigError("board.mask does not exist: " + board.mask);
  }
  train_sampler.validate();
  eval_sampler.validate();
  train.validate();
  if (attack.kind != AttackKind::kNone) attack.validate();
  if (eval_n < 1) throw ConfigError("eval.n must be >= 1");
  if (!(min_depth > 0.0) || !(max_depth > min_depth))
    throw ConfigError("depth.min_depth/max_depth must satisfy 0 < min < max");
  if (!train_ref_checkpoint.empty() &&
      !std::filesystem::exists(train_ref_checkpoint))
    throw ConfigError("train.ref_checkpoint does not exist: " +
                      train_ref_checkpoint);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".json") {
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad JSON in " + path + ": " + e.what());
    }
  } else if (ext == ".toml") {
    j = parse_toml_subset(f, path);
  } else {
    throw ConfigError("config must be a .toml or .json file: " + path);
  }
  ExperimentConfig cfg = experiment_config_from_json(j);
  cfg.validate();
  return cfg;
}

Experiment build_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Experiment e;
  e.cfg = cfg;

  std::vector<ObjectBoard> boards;
  if (cfg.board.kind == "synthetic") {
    for (int64_t i = 0; i < cfg.board.count; ++i) {
      // Board 0 keeps the configured size; the rest spread over +-30%.
      const double scale =
          (i == 0 || cfg.board.count == 1)
              ? 1.0
              : 0.7 + 0.6 * static_cast<double>(i - 1) /
                          static_cast<double>(std::max<int64_t>(
                              1, cfg.board.count - 2));
      boards.push_back(make_test_board(
          Rng::mix(cfg.seed, 0x60a2d + static_cast<uint64_t>(i)),
          cfg.board.width_px, cfg.board.height_px,
          cfg.board.physical_w * scale, cfg.board.physical_h * scale));
    }
  } else {
    boards.push_back(load_board(cfg.board.image, cfg.board.mask,
                                cfg.board.physical_w, cfg.board.physical_h));
  }
  e.train_pool.boards = boards;
  // Evaluation and attacks target the configured board only.
  e.eval_pool.boards = {boards.front()};
  e.train_pool.sampler = cfg.train_sampler;
  e.eval_pool.sampler = cfg.eval_sampler;

  if (cfg.scene.kind == "synthetic") {
    const PoseTransform pose =
        PoseTransform::stereo_baseline(cfg.scene.baseline);
    auto plane_at = [&](uint64_t stream) {
      Rng rng(Rng::mix(cfg.seed, stream));
      return rng.uniform(cfg.scene.plane_depth_min,
                         cfg.scene.plane_depth_max);
    };
    for (int64_t i = 0; i < cfg.scene.n_backgrounds; ++i)
      e.train_pool.backgrounds.push_back(make_synthetic_background(
          Rng::mix(cfg.seed, 100 + static_cast<uint64_t>(i)), cfg.camera, pose,
          plane_at(300 + static_cast<uint64_t>(i)), cfg.scene.texture_scale));
    for (int64_t i = 0; i < cfg.scene.n_eval_backgrounds; ++i)
      e.eval_pool.backgrounds.push_back(make_synthetic_background(
          Rng::mix(cfg.seed, 20000 + static_cast<uint64_t>(i)), cfg.camera,
          pose, plane_at(30000 + static_cast<uint64_t>(i)),
          cfg.scene.texture_scale));
  } else {
    std::vector<std::string> stems;
    for (const auto& entry :
         std::filesystem::directory_iterator(cfg.scene.dir)) {
      const std::string name = entry.path().string();
      const std::string suffix = "_t.png";
      if (name.size() > suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) ==
              0)
        stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty())
      throw ConfigError("scene.dir contains no *_t.png frames: " +
                        cfg.scene.dir);
    for (const std::string& stem : stems) {
      const BackgroundPair bg = load_background_pair(stem, cfg.camera);
      if (bg.frame_t.dim(1) != cfg.camera.height ||
          bg.frame_t.dim(2) != cfg.camera.width)
        throw ConfigError("scene frame size disagrees with camera config: " +
                          stem);
      e.train_pool.backgrounds.push_back(bg);
      e.eval_pool.backgrounds.push_back(bg);
    }
  }
  return e;
}

}  // namespace dh
