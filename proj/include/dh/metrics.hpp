#pragma once

#include <string>
#include <vector>

#include "dh/attack.hpp"
#include "dh/depth_net.hpp"
#include "dh/scene.hpp"

namespace dh {

struct MetricsReport {
  double abse = 0.0;   // mean |x - y|
  double rmse = 0.0;   // sqrt(mean (x - y)^2)
  double absr = 0.0;   // mean |y - x| / y
  double sqr = 0.0;    // mean (y - x)^2 / y
  double delta = 0.0;  // fraction with max(x/y, y/x) < 1.25
  int64_t n_pixels = 0;
  std::string region = "object-region";
};

// X = estimated, Y = reference, over mask-true pixels. Y must be positive on
// the mask; an empty mask is a contract violation.
MetricsReport compute_metrics(const Tensor& X, const Tensor& Y,
                              const Tensor& mask);

// Unweighted mean over per-scene reports; n_pixels accumulates.
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

struct EvalOptions {
  int64_t n_scenes = 100;
  uint64_t seed = 7;
};

struct AttackEvaluation {
  AttackReport attack;
  MetricsReport averaged;  // attacked vs benign prediction, object region
  std::vector<MetricsReport> per_scene;
  // Benign prediction vs ground-truth depth over the object region; n_pixels
  // is 0 when the scene source carries no depth.
  MetricsReport benign_vs_truth;
};

// Generates one perturbed board with the given attack (EoT over the eval
// pool), then scores it on n_scenes fresh draws: metrics compare the depth of
// the attacked scene against the benign prediction of the same scene.
// Per-scene work runs in parallel; results do not depend on thread count.
AttackEvaluation evaluate_attack(const DepthNet& net, const ObjectBoard& board,
                                 const ScenePool& eval_pool,
                                 const CameraIntrinsics& K,
                                 const AttackConfig& cfg,
                                 const EvalOptions& opt);

// Benign prediction vs ground truth over the object region (synthetic scenes).
MetricsReport evaluate_benign(const DepthNet& net, const ObjectBoard& board,
                              const ScenePool& eval_pool,
                              const CameraIntrinsics& K,
                              const EvalOptions& opt);

// Entry (i, j): attack generated on nets[i], scored on nets[j]. The diagonal
// is the white-box case.
std::vector<std::vector<MetricsReport>> transfer_matrix(
    const std::vector<DepthNet>& nets, const ObjectBoard& board,
    const ScenePool& eval_pool, const CameraIntrinsics& K,
    const AttackConfig& cfg, const EvalOptions& opt);

}  // namespace dh
