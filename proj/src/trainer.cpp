#include "dh/trainer.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

namespace dh {

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

Tensor pixel_grid(int64_t H, int64_t W, bool x_coordinate) {
  Tensor g = Tensor::zeros({1, H, W});
  double* d = g.data();
  for (int64_t v = 0; v < H; ++v)
    for (int64_t u = 0; u < W; ++u)
      d[v * W + u] = static_cast<double>(x_coordinate ? u : v);
  return g;
}

// 3x3 box filter via conv2d, treating channels as batch entries.
Tensor box3(const Tensor& x) {
  static const Tensor kBox = Tensor::full({1, 1, 3, 3}, 1.0 / 9.0);
  const int64_t c = x.dim(0), H = x.dim(1), W = x.dim(2);
  return reshape(conv2d(reshape(x, {c, 1, H, W}), kBox, Tensor(), 1, 1),
                 {c, H, W});
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " is not finite");
}

}  // namespace

ReconstructionResult reconstruct(const Tensor& I_s, const Tensor& depth,
                                 const PoseTransform& T,
                                 const CameraIntrinsics& K) {
  if (I_s.rank() != 3 || depth.rank() != 3 || depth.dim(0) != 1 ||
      depth.dim(1) != I_s.dim(1) || depth.dim(2) != I_s.dim(2))
    throw ShapeError("reconstruct expects I_s [3,H,W] and depth [1,H,W]");
  const int64_t H = I_s.dim(1), W = I_s.dim(2);
  const Tensor U = pixel_grid(H, W, true);
  const Tensor V = pixel_grid(H, W, false);

  const Tensor xd = affine(U, 1.0 / K.fx, -K.cx / K.fx);
  const Tensor yd = affine(V, 1.0 / K.fy, -K.cy / K.fy);
  const Tensor X = mul(xd, depth);
  const Tensor Y = mul(yd, depth);
  const Tensor& Z = depth;

  const auto& r = T.rotation;
  const auto& t = T.translation;
  const Tensor Xs = add(add(affine(X, r[0], 0.0), affine(Y, r[1], 0.0)),
                        affine(Z, r[2], t[0]));
  const Tensor Ys = add(add(affine(X, r[3], 0.0), affine(Y, r[4], 0.0)),
                        affine(Z, r[5], t[1]));
  const Tensor Zs = add(add(affine(X, r[6], 0.0), affine(Y, r[7], 0.0)),
                        affine(Z, r[8], t[2]));
  const Tensor Zsafe = maximum(Zs, Tensor::scalar(1e-9));
  const Tensor us = affine(div(Xs, Zsafe), K.fx, K.cx);
  const Tensor vs = affine(div(Ys, Zsafe), K.fy, K.cy);

  const BilinearSample s = bilinear_sample(I_s, concat_channels({us, vs}));
  ReconstructionResult out;
  out.image = s.value;
  out.valid_mask = s.in_view;
  // Points mapped behind the source camera are invalid even if their
  // projection lands in frame.
  const double* zv = Zs.data();
  double* mv = out.valid_mask.data();
  for (int64_t p = 0; p < H * W; ++p)
    if (zv[p] <= 1e-9) mv[p] = 0.0;
  return out;
}

Tensor photometric_error(const Tensor& a, const Tensor& b, const Tensor& mask,
                         double alpha) {
  if (a.shape() != b.shape() || a.rank() != 3)
    throw ShapeError("photometric_error expects matching [C,H,W] images");
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != a.dim(1) ||
      mask.dim(2) != a.dim(2))
    throw ShapeError("photometric_error mask must be [1,H,W]");
  if (alpha < 0.0 || alpha > 1.0)
    throw ContractError("photometric_error: alpha must lie in [0,1]");
  int64_t n_mask = 0;
  for (int64_t p = 0; p < mask.size(); ++p)
    if (mask.data()[p] > 0.5) ++n_mask;
  if (n_mask == 0)
    throw ContractError("photometric_error: mask selects no pixels");

  const Tensor mu_a = box3(a);
  const Tensor mu_b = box3(b);
  const Tensor sig_a = sub(box3(mul(a, a)), square(mu_a));
  const Tensor sig_b = sub(box3(mul(b, b)), square(mu_b));
  const Tensor sig_ab = sub(box3(mul(a, b)), mul(mu_a, mu_b));
  const Tensor num = mul(affine(mul(mu_a, mu_b), 2.0, kSsimC1),
                         affine(sig_ab, 2.0, kSsimC2));
  const Tensor den = mul(affine(add(square(mu_a), square(mu_b)), 1.0, kSsimC1),
                         affine(add(sig_a, sig_b), 1.0, kSsimC2));
  const Tensor ssim = div(num, den);

  const Tensor pe_map = add(affine(ssim, -alpha / 2.0, alpha / 2.0),
                            affine(abs(sub(a, b)), 1.0 - alpha, 0.0));
  const Tensor mask3 = concat_channels({mask, mask, mask});
  return affine(sum_all(mul(pe_map, mask3)),
                1.0 / (3.0 * static_cast<double>(n_mask)), 0.0);
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "benign") return TrainMode::kBenign;
  if (s == "selfsup") return TrainMode::kSelfSup;
  if (s == "sup_pseudo") return TrainMode::kSupPseudo;
  throw ConfigError("train.mode must be benign|selfsup|sup_pseudo, got '" + s +
                    "'");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kBenign: return "benign";
    case TrainMode::kSelfSup: return "selfsup";
    case TrainMode::kSupPseudo: return "sup_pseudo";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (pe_alpha < 0.0 || pe_alpha > 1.0)
    throw ConfigError("train.pe_alpha must lie in [0,1]");
  if (checkpoint_every < 0)
    throw ConfigError("train.checkpoint_every must be >= 0");
  if (mode != TrainMode::kBenign && attack.kind != AttackKind::kNone)
    attack.validate();
}

namespace {

// Generates the attacked board image for one scene, or the benign board when
// the step runs without an inner attack.
struct InnerAttack {
  Tensor board_image;
  double adv_loss = 0.0;
};

InnerAttack inner_attack(const DepthNet& net, const ScenePool& pool,
                         const Scene& scene, const TrainConfig& cfg,
                         uint64_t seed) {
  const ObjectBoard& board =
      pool.boards[static_cast<size_t>(scene.draw.board_index)];
  if (cfg.mode == TrainMode::kBenign || cfg.attack.kind == AttackKind::kNone)
    return {board.image, 0.0};
  // run_attack_on_scene snapshots the net, so training gradients never mix
  // with attack gradients.
  const AttackResult res = run_attack_on_scene(net, board, scene, cfg.attack,
                                               seed);
  return {res.board.image, res.report.final_adv_loss};
}

void scale_grads(std::vector<Tensor>& params, double k) {
  if (k == 1.0) return;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    double* g = p.grad_data();
    for (int64_t i = 0; i < p.size(); ++i) g[i] *= k;
  }
}

}  // namespace

StepStats selfsup_adv_step(DepthNet& net, AdamState& adam,
                           const ScenePool& pool, const CameraIntrinsics& K,
                           const TrainConfig& cfg, Rng& rng,
                           int64_t step_index) {
  std::vector<Tensor> params = net.parameters();
  for (Tensor& p : params) {
    p.ensure_grad();
    p.zero_grad();
  }
  StepStats stats;
  for (int64_t b = 0; b < cfg.batch_size; ++b) {
    const Scene scene = draw_scene(pool, K, rng);
    const InnerAttack ia =
        inner_attack(net, pool, scene, cfg,
                     Rng::mix(cfg.seed, 0x5e1f * (step_index + 1) + b));
    GradientTape tape;
    TapeScope scope(tape);
    const Tensor attacked =
        apply_stamp(scene.plan_t, ia.board_image, scene.frame_t);
    const Tensor depth = net.forward(attacked);
    const ReconstructionResult rec =
        reconstruct(scene.image_s, depth, scene.pose, K);
    const Tensor pe = photometric_error(scene.image_t, rec.image,
                                        rec.valid_mask, cfg.pe_alpha);
    check_finite(pe.item(), "training loss");
    tape.backward(pe);
    stats.pe += pe.item();
    stats.attack_adv_loss += ia.adv_loss;
  }
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  scale_grads(params, inv_b);
  stats.pe *= inv_b;
  stats.attack_adv_loss *= inv_b;
  stats.loss = stats.pe;
  adam_step(params, adam, cfg.lr);
  return stats;
}

StepStats sup_pseudo_step(DepthNet& net, const DepthNet& frozen_ref,
                          AdamState& adam, const ScenePool& pool,
                          const CameraIntrinsics& K, const TrainConfig& cfg,
                          Rng& rng, int64_t step_index) {
  std::vector<Tensor> params = net.parameters();
  for (Tensor& p : params) {
    p.ensure_grad();
    p.zero_grad();
  }
  StepStats stats;
  for (int64_t b = 0; b < cfg.batch_size; ++b) {
    const Scene scene = draw_scene(pool, K, rng);
    const InnerAttack ia =
        inner_attack(net, pool, scene, cfg,
                     Rng::mix(cfg.seed, 0x5e1f * (step_index + 1) + b));
    const Tensor pseudo_truth = frozen_ref.forward(scene.image_t).detached();
    GradientTape tape;
    TapeScope scope(tape);
    const Tensor attacked =
        apply_stamp(scene.plan_t, ia.board_image, scene.frame_t);
    const Tensor pred = net.forward(attacked);
    const Tensor loss = mean_all(square(sub(pred, pseudo_truth)));
    check_finite(loss.item(), "training loss");
    tape.backward(loss);
    stats.loss += loss.item();
    stats.attack_adv_loss += ia.adv_loss;
  }
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  scale_grads(params, inv_b);
  stats.loss *= inv_b;
  stats.attack_adv_loss *= inv_b;
  stats.pe = 0.0;
  adam_step(params, adam, cfg.lr);
  return stats;
}

HardenResult harden(DepthNet& net, const ScenePool& pool,
                    const CameraIntrinsics& K, const TrainConfig& cfg,
                    const DepthNet* frozen_ref, std::ostream* jsonl,
                    const std::string& checkpoint_prefix) {
  cfg.validate();
  if (pool.boards.empty()) throw ConfigError("board pool is empty");
  if (pool.backgrounds.empty()) throw ConfigError("background pool is empty");
  pool.sampler.validate();
  if (cfg.mode == TrainMode::kSupPseudo && frozen_ref == nullptr)
    throw ContractError("sup_pseudo training needs a frozen reference net");

  net.set_trainable(true);
  AdamState adam;
  Rng rng(Rng::mix(cfg.seed, 0x7a41));
  HardenResult result;
  result.log.reserve(static_cast<size_t>(cfg.steps));
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const StepStats s =
        (cfg.mode == TrainMode::kSupPseudo)
            ? sup_pseudo_step(net, *frozen_ref, adam, pool, K, cfg, rng, step)
            : selfsup_adv_step(net, adam, pool, K, cfg, rng, step);
    result.log.push_back(s);
    if (jsonl) {
      nlohmann::ordered_json j{{"step", step},
                               {"mode", to_string(cfg.mode)},
                               {"loss", s.loss},
                               {"pe", s.pe},
                               {"attack_adv_loss", s.attack_adv_loss}};
      (*jsonl) << j.dump() << "\n";
    }
    if (!checkpoint_prefix.empty() && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
      net.save(checkpoint_prefix + "_step" + std::to_string(step + 1) +
               ".dhck");
    }
  }
  net.set_trainable(false);
  if (!checkpoint_prefix.empty()) net.save(checkpoint_prefix + "_final.dhck");
  return result;
}

}  // namespace dh
