#pragma once

#include <string>
#include <vector>

#include "dh/geometry.hpp"
#include "dh/rng.hpp"
#include "dh/tensor.hpp"

namespace dh {

// 2D object board: RGB image, binary cut-out mask and physical size. The
// pixel and physical aspect ratios must agree within 1%.
struct ObjectBoard {
  Tensor image;  // [3,h,w] in [0,1]
  Tensor mask;   // [1,h,w] in {0,1}
  double physical_w = 0.0, physical_h = 0.0;  // meters

  int64_t pixel_w() const { return image.dim(2); }
  int64_t pixel_h() const { return image.dim(1); }
  void validate() const;
};

// Two neighboring views of a street scene plus the pose relating them.
// depth_t is only present for synthetic scenes (constant-plane ground truth).
struct BackgroundPair {
  Tensor frame_t;  // [3,H,W]
  Tensor frame_s;  // [3,H,W]
  PoseTransform pose;
  Tensor depth_t;  // [1,H,W], optional

  void validate() const;
};

struct PlacementSampler {
  double z_min = 5.0, z_max = 10.0;        // meters
  double alpha_min = -0.5236, alpha_max = 0.5236;  // radians

  void validate() const;
};

struct SceneDraw {
  int64_t bg_index = 0;
  int64_t board_index = 0;
  double z_c = 0.0;
  double alpha = 0.0;
};

// Uniform draw of background, board, distance and angle, in that order.
SceneDraw sample_scene(const PlacementSampler& sampler, int64_t n_boards,
                       int64_t n_backgrounds, Rng& rng);

// Precomputed inverse mapping of one board placement into one view: constant
// sampling coordinates into the board image, the hit-pixel region mask, and
// the true depth of each hit pixel. Re-applying a plan to a modified board
// image is differentiable w.r.t. the image.
struct StampPlan {
  Tensor coords;       // [2,H,W]; out-of-region pixels point far off-board
  Tensor region;       // [1,H,W] in {0,1}
  Tensor board_depth;  // [1,H,W]; view-frame depth inside region, else 0
  int64_t pixels = 0;  // number of region pixels
};

// view_pose maps target-camera coordinates into the stamped view's camera
// (identity for the target view itself). Throws EmptyRegionError when the
// projected, mask-positive board hits no frame pixel.
StampPlan plan_stamp(const ObjectBoard& board, const BoardPlacement& place,
                     const CameraIntrinsics& K, const PoseTransform& view_pose,
                     int64_t frame_h, int64_t frame_w);

// frame everywhere except the region, which takes the board's color via
// bilinear sampling. Differentiable w.r.t. board_image (and frame).
Tensor apply_stamp(const StampPlan& plan, const Tensor& board_image,
                   const Tensor& frame);

struct StampResult {
  Tensor image;
  Tensor region;
};

StampResult stamp_target(const ObjectBoard& board, const BackgroundPair& bg,
                         const BoardPlacement& place,
                         const CameraIntrinsics& K);
StampResult stamp_source(const ObjectBoard& board, const BackgroundPair& bg,
                         const BoardPlacement& place,
                         const CameraIntrinsics& K);

// One synthesized two-view sample.
struct Scene {
  StampPlan plan_t, plan_s;
  Tensor image_t, image_s;  // benign stamped views
  Tensor true_depth_t;      // board depth in-region, background depth outside
  PoseTransform pose;
  BoardPlacement place;
  Tensor frame_t, frame_s;  // raw backgrounds (aliases)
  SceneDraw draw;
};

Scene synthesize_scene(const ObjectBoard& board, const BackgroundPair& bg,
                       const BoardPlacement& place, const CameraIntrinsics& K);

struct ScenePool {
  std::vector<ObjectBoard> boards;
  std::vector<BackgroundPair> backgrounds;
  PlacementSampler sampler;
};

BoardPlacement placement_for(const ObjectBoard& board, const SceneDraw& draw);

// Draws until the board lands in frame (EmptyRegionError retries, then
// AttackError). Every draw consumes RNG state deterministically.
Scene draw_scene(const ScenePool& pool, const CameraIntrinsics& K, Rng& rng,
                 int max_tries = 32);

// Procedurally textured flat background at constant depth. frame_t holds the
// texture; frame_s is frame_t resampled through the plane homography induced
// by `pose`, with border clamping (identity poses copy frame_t exactly).
BackgroundPair make_synthetic_background(uint64_t seed,
                                         const CameraIntrinsics& K,
                                         const PoseTransform& pose,
                                         double plane_depth,
                                         double texture_scale);

// Deterministic test-card board: smooth noise plus contrast blocks, full mask.
ObjectBoard make_test_board(uint64_t seed, int64_t w, int64_t h,
                            double physical_w, double physical_h);

ObjectBoard load_board(const std::string& image_png, const std::string& mask_png,
                       double physical_w, double physical_h);

// Loads <stem>_t.png, <stem>_s.png and the <stem>.json pose sidecar
// {fx, fy, cx, cy, rotation: 9 row-major, translation: 3}.
BackgroundPair load_background_pair(const std::string& stem,
                                    const CameraIntrinsics& K);

}  // namespace dh
