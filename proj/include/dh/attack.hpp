#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dh/depth_net.hpp"
#include "dh/scene.hpp"

namespace dh {

// Soft-L0 perturbation parameters: positive/negative components with a tanh
// tail penalty. delta = maxp * (clip01(b_p) - clip01(b_n)).
struct PerturbationState {
  Tensor b_p, b_n;  // [3,h,w]
  double maxp = 1.0;
  double gamma = 0.05;
  // Weight on the pixel-count penalty. The tanh tail has its steepest slope
  // right at the zero initialization, where it outweighs the adversarial
  // gradient by more than an order of magnitude; the small weight lets useful
  // pixels switch on while idle ones still decay into the off tail.
  double lambda_pix = 0.03;
};

// Components start at 0: delta is zero and the clip boundary subgradient
// keeps the adversarial gradient alive from the first step.
PerturbationState make_perturbation_state(int64_t h, int64_t w);

Tensor materialize_delta(const PerturbationState& s);

// Per-pixel channel-max tanh tail mass of both components, averaged over
// pixels so the penalty is resolution independent.
Tensor pixel_norm(const PerturbationState& s);

// Keeps the floor(epsilon*h*w) pixels of largest channel-max |delta| and
// zeroes the rest; ties broken by row-major pixel index.
Tensor hard_l0_project(const Tensor& delta, double epsilon);

enum class AttackKind { kNone, kSoftL0, kPgdLinf, kPatch };

AttackKind attack_kind_from_string(const std::string& s);
std::string to_string(AttackKind k);

struct AttackConfig {
  AttackKind kind = AttackKind::kSoftL0;
  // L0 pixel fraction, Linf bound, or patch area fraction depending on kind.
  double epsilon = 0.1;
  int64_t steps = 100;
  double lr = 0.05;  // Adam rate for soft_l0/patch; PGD derives 2.5*eps/steps
  int64_t eot_samples = 1;
  uint64_t seed = 1;

  void validate() const;
};

struct AttackReport {
  std::string kind;
  double epsilon = 0.0;
  int64_t steps = 0;
  double final_adv_loss = 0.0;
  double final_pixel_norm = 0.0;
  double perturbed_fraction = 0.0;
  std::vector<double> per_step_loss;
};

struct AttackResult {
  ObjectBoard board;  // perturbed board; mask and physical size unchanged
  AttackReport report;
};

// Adversarial objective of one scene: MSE between the reciprocal of the
// predicted depth and zero over the object region (push the object away).
Tensor region_adv_loss(const DepthNet& net, const Scene& scene,
                       const Tensor& board_image);

// EoT attack: every optimization step draws fresh placements/backgrounds from
// the pool. The net is snapshot-frozen for the duration of the attack.
AttackResult run_attack(const DepthNet& net, const ObjectBoard& board,
                        const ScenePool& pool, const CameraIntrinsics& K,
                        const AttackConfig& cfg);

// Inner-loop variant used during adversarial training: optimizes against one
// fixed, already-synthesized scene.
AttackResult run_attack_on_scene(const DepthNet& net, const ObjectBoard& board,
                                 const Scene& scene, const AttackConfig& cfg,
                                 uint64_t seed);

}  // namespace dh
