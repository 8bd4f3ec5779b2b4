#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dh/attack.hpp"
#include "dh/depth_net.hpp"
#include "dh/scene.hpp"

namespace dh {

struct ReconstructionResult {
  Tensor image;       // [3,H,W]
  Tensor valid_mask;  // [1,H,W]; 0 exactly where sampling left the source
};

// Warps the source view into the target view through the predicted depth:
// lift each target pixel to 3D at depth(u,v), map through T, project, and
// bilinear-sample I_s there. Differentiable w.r.t. depth (and I_s).
ReconstructionResult reconstruct(const Tensor& I_s, const Tensor& depth,
                                 const PoseTransform& T,
                                 const CameraIntrinsics& K);

// Masked mean of alpha/2 * (1 - SSIM_3x3) + (1 - alpha) * |a - b|, averaged
// over channels. SSIM uses 3x3 box statistics with zero padding and the usual
// stabilizers C1 = 0.01^2, C2 = 0.03^2.
Tensor photometric_error(const Tensor& a, const Tensor& b, const Tensor& mask,
                         double alpha = 0.85);

enum class TrainMode { kBenign, kSelfSup, kSupPseudo };

TrainMode train_mode_from_string(const std::string& s);
std::string to_string(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::kSelfSup;
  int64_t steps = 2000;
  int64_t batch_size = 1;
  double lr = 1e-3;
  double pe_alpha = 0.85;
  int64_t checkpoint_every = 0;  // 0 = only the final checkpoint
  uint64_t seed = 1;
  AttackConfig attack;  // inner perturbation generator (kind none = benign)

  void validate() const;
};

struct StepStats {
  double loss = 0.0;
  double pe = 0.0;
  double attack_adv_loss = 0.0;
};

// One optimizer iteration: draw scene(s), run the inner attack, predict depth
// on the attacked view, reconstruct the target from the source, and descend
// the photometric error. Updates only the depth parameters (the stereo
// transform is a fixed constant).
StepStats selfsup_adv_step(DepthNet& net, AdamState& adam,
                           const ScenePool& pool, const CameraIntrinsics& K,
                           const TrainConfig& cfg, Rng& rng,
                           int64_t step_index);

// Supervised baseline: MSE against the frozen reference's benign prediction.
StepStats sup_pseudo_step(DepthNet& net, const DepthNet& frozen_ref,
                          AdamState& adam, const ScenePool& pool,
                          const CameraIntrinsics& K, const TrainConfig& cfg,
                          Rng& rng, int64_t step_index);

struct HardenResult {
  std::vector<StepStats> log;
};

// Runs the configured step kind for cfg.steps iterations. Writes one JSON
// line per step to `jsonl` when given, and checkpoints under
// `checkpoint_prefix` when non-empty. frozen_ref is required for sup_pseudo.
HardenResult harden(DepthNet& net, const ScenePool& pool,
                    const CameraIntrinsics& K, const TrainConfig& cfg,
                    const DepthNet* frozen_ref, std::ostream* jsonl,
                    const std::string& checkpoint_prefix);

}  // namespace dh
