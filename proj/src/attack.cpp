#include "dh/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dh {

PerturbationState make_perturbation_state(int64_t h, int64_t w) {
  PerturbationState s;
  s.b_p = Tensor::zeros({3, h, w}).set_requires_grad(true);
  s.b_n = Tensor::zeros({3, h, w}).set_requires_grad(true);
  return s;
}

Tensor materialize_delta(const PerturbationState& s) {
  return affine(sub(clip01(s.b_p), clip01(s.b_n)), s.maxp, 0.0);
}

Tensor pixel_norm(const PerturbationState& s) {
  const double np = static_cast<double>(s.b_p.dim(1) * s.b_p.dim(2));
  auto tail = [&](const Tensor& b) {
    return sum_all(channel_max(affine(tanh(affine(b, 1.0 / s.gamma, 0.0)),
                                      0.5, 0.5)));
  };
  return affine(add(tail(s.b_p), tail(s.b_n)), 1.0 / np, 0.0);
}

Tensor hard_l0_project(const Tensor& delta, double epsilon) {
  if (delta.rank() != 3) throw ShapeError("hard_l0_project expects [C,h,w]");
  if (!(epsilon > 0.0) || epsilon > 1.0)
    throw ContractError("hard_l0_project: epsilon must lie in (0, 1]");
  const int64_t c = delta.dim(0), np = delta.dim(1) * delta.dim(2);
  const int64_t keep = static_cast<int64_t>(
      std::floor(epsilon * static_cast<double>(np)));
  std::vector<double> score(static_cast<size_t>(np), 0.0);
  const double* dv = delta.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t p = 0; p < np; ++p)
      score[static_cast<size_t>(p)] =
          std::max(score[static_cast<size_t>(p)], std::fabs(dv[ch * np + p]));
  std::vector<int64_t> order(static_cast<size_t>(np));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
  });
  Tensor out = Tensor::zeros(delta.shape());
  double* ov = out.data();
  for (int64_t i = 0; i < keep; ++i) {
    const int64_t p = order[static_cast<size_t>(i)];
    for (int64_t ch = 0; ch < c; ++ch) ov[ch * np + p] = dv[ch * np + p];
  }
  return out;
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "none") return AttackKind::kNone;
  if (s == "soft_l0") return AttackKind::kSoftL0;
  if (s == "pgd_linf") return AttackKind::kPgdLinf;
  if (s == "patch") return AttackKind::kPatch;
  throw ConfigError("attack.kind must be none|soft_l0|pgd_linf|patch, got '" +
                    s + "'");
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kNone: return "none";
    case AttackKind::kSoftL0: return "soft_l0";
    case AttackKind::kPgdLinf: return "pgd_linf";
    case AttackKind::kPatch: return "patch";
  }
  return "?";
}

void AttackConfig::validate() const {
  if (kind == AttackKind::kNone) return;
  if (!(epsilon > 0.0)) throw ConfigError("attack.epsilon must be positive");
  if ((kind == AttackKind::kSoftL0 || kind == AttackKind::kPatch) &&
      epsilon > 1.0)
    throw ConfigError("attack.epsilon is a pixel fraction and must be <= 1");
  if (steps < 1) throw ConfigError("attack.steps must be >= 1");
  if (lr <= 0.0) throw ConfigError("attack.lr must be positive");
  if (eot_samples < 1) throw ConfigError("attack.eot_samples must be >= 1");
}

Tensor region_adv_loss(const DepthNet& net, const Scene& scene,
                       const Tensor& board_image) {
  const Tensor attacked =
      apply_stamp(scene.plan_t, board_image, scene.frame_t);
  const Tensor depth = net.forward(attacked);
  const Tensor masked = mul(square(reciprocal(depth)), scene.plan_t.region);
  return affine(sum_all(masked),
                1.0 / static_cast<double>(scene.plan_t.pixels), 0.0);
}

namespace {

using SceneFn = std::function<const Scene&()>;

double fraction_perturbed(const Tensor& adv, const Tensor& orig) {
  const int64_t np = adv.dim(1) * adv.dim(2);
  const double* a = adv.data();
  const double* o = orig.data();
  int64_t count = 0;
  for (int64_t p = 0; p < np; ++p) {
    double m = 0.0;
    for (int64_t c = 0; c < 3; ++c)
      m = std::max(m, std::fabs(a[c * np + p] - o[c * np + p]));
    if (m > 1.0 / 255.0) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(np);
}

Tensor eot_adv_loss(const DepthNet& net, const Tensor& board_image,
                    SceneFn& scenes, int64_t samples) {
  Tensor acc = region_adv_loss(net, scenes(), board_image);
  for (int64_t e = 1; e < samples; ++e)
    acc = add(acc, region_adv_loss(net, scenes(), board_image));
  return affine(acc, 1.0 / static_cast<double>(samples), 0.0);
}

void check_finite_loss(double v) {
  if (!std::isfinite(v)) throw NumericError("attack loss is not finite");
}

double eval_plain_loss(const DepthNet& net, const Tensor& board_image,
                       SceneFn& scenes) {
  return region_adv_loss(net, scenes(), board_image).item();
}

AttackResult soft_l0_attack(const DepthNet& net, const ObjectBoard& board,
                            SceneFn scenes, const AttackConfig& cfg) {
  const int64_t h = board.pixel_h(), w = board.pixel_w();
  PerturbationState st = make_perturbation_state(h, w);
  AdamState adam;
  AttackReport rep{to_string(cfg.kind), cfg.epsilon, cfg.steps, 0, 0, 0, {}};
  std::vector<Tensor> params{st.b_p, st.b_n};
  for (int64_t step = 0; step < cfg.steps; ++step) {
    st.b_p.zero_grad();
    st.b_n.zero_grad();
    GradientTape tape;
    TapeScope scope(tape);
    const Tensor adv_img = clip01(add(board.image, materialize_delta(st)));
    const Tensor adv = eot_adv_loss(net, adv_img, scenes, cfg.eot_samples);
    const Tensor total =
        add(adv, affine(pixel_norm(st), st.lambda_pix, 0.0));
    check_finite_loss(total.item());
    tape.backward(total);
    adam_step(params, adam, cfg.lr);
    rep.per_step_loss.push_back(total.item());
  }
  const Tensor delta = hard_l0_project(materialize_delta(st), cfg.epsilon);
  AttackResult res;
  res.board = board;
  res.board.image = clip01(add(board.image, delta));
  rep.final_pixel_norm = pixel_norm(st).item();
  rep.final_adv_loss = eval_plain_loss(net, res.board.image, scenes);
  rep.perturbed_fraction = fraction_perturbed(res.board.image, board.image);
  res.report = rep;
  return res;
}

AttackResult pgd_linf_attack(const DepthNet& net, const ObjectBoard& board,
                             SceneFn scenes, const AttackConfig& cfg) {
  const int64_t n = board.image.size();
  const double step_size =
      2.5 * cfg.epsilon / static_cast<double>(cfg.steps);
  Tensor delta = Tensor::zeros(board.image.shape());
  AttackReport rep{to_string(cfg.kind), cfg.epsilon, cfg.steps, 0, 0, 0, {}};
  const double* a = board.image.data();
  for (int64_t step = 0; step < cfg.steps; ++step) {
    Tensor dt = delta.clone().set_requires_grad(true);
    GradientTape tape;
    TapeScope scope(tape);
    const Tensor adv_img = clip01(add(board.image, dt));
    const Tensor adv = eot_adv_loss(net, adv_img, scenes, cfg.eot_samples);
    check_finite_loss(adv.item());
    tape.backward(adv);
    dt.ensure_grad();
    const double* g = dt.grad_data();
    double* d = delta.data();
    for (int64_t i = 0; i < n; ++i) {
      const double sgn = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = d[i] - step_size * sgn;  // descend the reciprocal-depth MSE
      v = std::clamp(v, -cfg.epsilon, cfg.epsilon);
      v = std::clamp(v, -a[i], 1.0 - a[i]);  // keep A + delta in [0,1]
      d[i] = v;
    }
    rep.per_step_loss.push_back(adv.item());
  }
  AttackResult res;
  res.board = board;
  res.board.image = clip01(add(board.image, delta));
  rep.final_adv_loss = eval_plain_loss(net, res.board.image, scenes);
  rep.perturbed_fraction = fraction_perturbed(res.board.image, board.image);
  res.report = rep;
  return res;
}

Tensor centered_patch_mask(int64_t h, int64_t w, double area_fraction) {
  const double side = std::sqrt(area_fraction);
  const int64_t ph = std::max<int64_t>(
      1, static_cast<int64_t>(std::lround(static_cast<double>(h) * side)));
  const int64_t pw = std::max<int64_t>(
      1, static_cast<int64_t>(std::lround(static_cast<double>(w) * side)));
  const int64_t r0 = (h - ph) / 2, c0 = (w - pw) / 2;
  Tensor m = Tensor::zeros({1, h, w});
  for (int64_t r = r0; r < r0 + ph; ++r)
    for (int64_t c = c0; c < c0 + pw; ++c) m.data()[r * w + c] = 1.0;
  return m;
}

AttackResult patch_attack(const DepthNet& net, const ObjectBoard& board,
                          SceneFn scenes, const AttackConfig& cfg) {
  const int64_t h = board.pixel_h(), w = board.pixel_w();
  const Tensor rect = centered_patch_mask(h, w, cfg.epsilon);
  const Tensor rect3 = concat_channels({rect, rect, rect});
  Tensor patch = board.image.clone().set_requires_grad(true);
  AdamState adam;
  std::vector<Tensor> params{patch};
  AttackReport rep{to_string(cfg.kind), cfg.epsilon, cfg.steps, 0, 0, 0, {}};
  for (int64_t step = 0; step < cfg.steps; ++step) {
    patch.zero_grad();
    GradientTape tape;
    TapeScope scope(tape);
    const Tensor adv_img = add(mul(clip01(patch), rect3),
                               mul(board.image, affine(rect3, -1.0, 1.0)));
    const Tensor adv = eot_adv_loss(net, adv_img, scenes, cfg.eot_samples);
    check_finite_loss(adv.item());
    tape.backward(adv);
    adam_step(params, adam, cfg.lr);
    rep.per_step_loss.push_back(adv.item());
  }
  AttackResult res;
  res.board = board;
  res.board.image = add(mul(clip01(patch), rect3),
                        mul(board.image, affine(rect3, -1.0, 1.0)));
  rep.final_adv_loss = eval_plain_loss(net, res.board.image, scenes);
  rep.perturbed_fraction = fraction_perturbed(res.board.image, board.image);
  res.report = rep;
  return res;
}

AttackResult dispatch(const DepthNet& net, const ObjectBoard& board,
                      SceneFn scenes, const AttackConfig& cfg) {
  cfg.validate();
  board.validate();
  // Snapshot the parameters so gradients only ever flow to the perturbation.
  const DepthNet frozen = net.clone();
  switch (cfg.kind) {
    case AttackKind::kSoftL0:
      return soft_l0_attack(frozen, board, std::move(scenes), cfg);
    case AttackKind::kPgdLinf:
      return pgd_linf_attack(frozen, board, std::move(scenes), cfg);
    case AttackKind::kPatch:
      return patch_attack(frozen, board, std::move(scenes), cfg);
    case AttackKind::kNone: {
      AttackResult res;
      res.board = board;
      res.board.image = board.image.clone();
      res.report = {to_string(cfg.kind), 0.0, 0, 0.0, 0.0, 0.0, {}};
      return res;
    }
  }
  throw ContractError("unknown attack kind");
}

}  // namespace

AttackResult run_attack(const DepthNet& net, const ObjectBoard& board,
                        const ScenePool& pool, const CameraIntrinsics& K,
                        const AttackConfig& cfg) {
  auto rng = std::make_shared<Rng>(Rng::mix(cfg.seed, 0xa77ac));
  auto current = std::make_shared<Scene>();
  auto provider = [&pool, &K, rng, current]() -> const Scene& {
    *current = draw_scene(pool, K, *rng);
    return *current;
  };
  return dispatch(net, board, provider, cfg);
}

AttackResult run_attack_on_scene(const DepthNet& net, const ObjectBoard& board,
                                 const Scene& scene, const AttackConfig& cfg,
                                 uint64_t seed) {
  AttackConfig c = cfg;
  c.seed = seed;
  auto provider = [&scene]() -> const Scene& { return scene; };
  return dispatch(net, board, provider, c);
}

}  // namespace dh
