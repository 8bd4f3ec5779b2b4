#include "dh/metrics.hpp"

#include <cmath>
#include <exception>

namespace dh {

MetricsReport compute_metrics(const Tensor& X, const Tensor& Y,
                              const Tensor& mask) {
  if (X.shape() != Y.shape() || X.shape() != mask.shape())
    throw ShapeError("compute_metrics: X, Y and mask must share a shape");
  MetricsReport r;
  double se = 0.0;
  const double* x = X.data();
  const double* y = Y.data();
  const double* m = mask.data();
  for (int64_t i = 0; i < X.size(); ++i) {
    if (m[i] <= 0.5) continue;
    if (y[i] <= 0.0)
      throw ContractError("compute_metrics: reference depth must be positive");
    const double d = x[i] - y[i];
    r.abse += std::fabs(d);
    se += d * d;
    r.absr += std::fabs(d) / y[i];
    r.sqr += d * d / y[i];
    if (std::max(x[i] / y[i], y[i] / x[i]) < 1.25) r.delta += 1.0;
    ++r.n_pixels;
  }
  if (r.n_pixels == 0)
    throw ContractError("compute_metrics: mask selects no pixels");
  const double n = static_cast<double>(r.n_pixels);
  r.abse /= n;
  r.rmse = std::sqrt(se / n);
  r.absr /= n;
  r.sqr /= n;
  r.delta /= n;
  return r;
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty())
    throw ContractError("average_reports: no reports to average");
  MetricsReport avg;
  avg.region = reports.front().region;
  for (const MetricsReport& r : reports) {
    avg.abse += r.abse;
    avg.rmse += r.rmse;
    avg.absr += r.absr;
    avg.sqr += r.sqr;
    avg.delta += r.delta;
    avg.n_pixels += r.n_pixels;
  }
  const double n = static_cast<double>(reports.size());
  avg.abse /= n;
  avg.rmse /= n;
  avg.absr /= n;
  avg.sqr /= n;
  avg.delta /= n;
  return avg;
}

namespace {

struct SceneScore {
  MetricsReport attacked;
  MetricsReport benign;
  bool has_benign = false;
};

// Scores one eval scene: benign vs attacked prediction over the object
// region, plus benign vs ground truth when the scene carries depth.
SceneScore score_scene(const DepthNet& net, const ObjectBoard& adv_board,
                       const ScenePool& pool, const CameraIntrinsics& K,
                       uint64_t scene_seed) {
  Rng rng(scene_seed);
  const Scene scene = draw_scene(pool, K, rng);
  const Tensor benign_depth = net.forward(scene.image_t);
  const Tensor attacked_img =
      apply_stamp(scene.plan_t, adv_board.image, scene.frame_t);
  const Tensor attacked_depth = net.forward(attacked_img);
  SceneScore s;
  s.attacked =
      compute_metrics(attacked_depth, benign_depth, scene.plan_t.region);
  const double* td = scene.true_depth_t.data();
  bool has_truth = false;
  for (int64_t p = 0; p < scene.true_depth_t.size(); ++p)
    if (td[p] > 0.0) has_truth = true;
  if (has_truth) {
    s.benign = compute_metrics(benign_depth, scene.true_depth_t,
                               scene.plan_t.region);
    s.has_benign = true;
  }
  return s;
}

std::vector<SceneScore> score_scenes(const DepthNet& net,
                                     const ObjectBoard& adv_board,
                                     const ScenePool& pool,
                                     const CameraIntrinsics& K,
                                     const EvalOptions& opt) {
  std::vector<SceneScore> scores(static_cast<size_t>(opt.n_scenes));
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < opt.n_scenes; ++i) {
    try {
      scores[static_cast<size_t>(i)] =
          score_scene(net, adv_board, pool, K,
                      Rng::mix(opt.seed, 0xeba1 + static_cast<uint64_t>(i)));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return scores;
}

}  // namespace

AttackEvaluation evaluate_attack(const DepthNet& net, const ObjectBoard& board,
                                 const ScenePool& eval_pool,
                                 const CameraIntrinsics& K,
                                 const AttackConfig& cfg,
                                 const EvalOptions& opt) {
  if (opt.n_scenes < 1) throw ConfigError("eval.n must be >= 1");
  AttackEvaluation ev;
  ObjectBoard adv_board;
  if (cfg.kind == AttackKind::kNone) {
    adv_board = board;
    ev.attack.kind = "none";
  } else {
    AttackResult res = run_attack(net, board, eval_pool, K, cfg);
    adv_board = res.board;
    ev.attack = res.report;
  }
  const std::vector<SceneScore> scores =
      score_scenes(net, adv_board, eval_pool, K, opt);
  std::vector<MetricsReport> benign;
  for (const SceneScore& s : scores) {
    ev.per_scene.push_back(s.attacked);
    if (s.has_benign) benign.push_back(s.benign);
  }
  ev.averaged = average_reports(ev.per_scene);
  if (!benign.empty()) ev.benign_vs_truth = average_reports(benign);
  return ev;
}

MetricsReport evaluate_benign(const DepthNet& net, const ObjectBoard& board,
                              const ScenePool& eval_pool,
                              const CameraIntrinsics& K,
                              const EvalOptions& opt) {
  const std::vector<SceneScore> scores =
      score_scenes(net, board, eval_pool, K, opt);
  std::vector<MetricsReport> benign;
  for (const SceneScore& s : scores)
    if (s.has_benign) benign.push_back(s.benign);
  if (benign.empty())
    throw ContractError(
        "evaluate_benign: scene source provides no ground-truth depth");
  return average_reports(benign);
}

std::vector<std::vector<MetricsReport>> transfer_matrix(
    const std::vector<DepthNet>& nets, const ObjectBoard& board,
    const ScenePool& eval_pool, const CameraIntrinsics& K,
    const AttackConfig& cfg, const EvalOptions& opt) {
  if (nets.empty()) throw ContractError("transfer_matrix: no nets given");
  std::vector<std::vector<MetricsReport>> matrix(nets.size());
  for (size_t i = 0; i < nets.size(); ++i) {
    const AttackResult res = run_attack(nets[i], board, eval_pool, K, cfg);
    for (size_t j = 0; j < nets.size(); ++j) {
      const std::vector<SceneScore> scores =
          score_scenes(nets[j], res.board, eval_pool, K, opt);
      std::vector<MetricsReport> per_scene;
      for (const SceneScore& s : scores) per_scene.push_back(s.attacked);
      matrix[i].push_back(average_reports(per_scene));
    }
  }
  return matrix;
}

}  // namespace dh
