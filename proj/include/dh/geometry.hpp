#pragma once

#include <array>
#include <cstdint>

#include "dh/errors.hpp"

namespace dh {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  int64_t width = 0, height = 0;

  void validate() const;
};

// Rigid transform mapping target-camera coordinates into source-camera
// coordinates (X_s = R * X_t + t). Stored as an explicit row-major matrix.
struct PoseTransform {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> translation{0, 0, 0};

  static PoseTransform identity() { return {}; }
  // Source camera `baseline` meters to the right of the target camera.
  static PoseTransform stereo_baseline(double baseline);
  PoseTransform inverse() const;
  bool is_identity() const;
  void validate(double tol = 1e-9) const;  // orthonormal, det +1
};

// Placement of the planar object board: camera-to-board-center distance z_c,
// yaw alpha (radians), physical size in meters, image size in pixels.
struct BoardPlacement {
  double z_c = 0.0;
  double alpha = 0.0;
  double physical_w = 0.0, physical_h = 0.0;
  int64_t board_w = 0, board_h = 0;
};

// Board pixel (u, v) with origin at the top-left corner, +v downward, to a 3D
// point in the target camera frame. The board center sits on the optical axis.
Vec3 board_to_camera(const BoardPlacement& p, double u, double v);

struct PixelDepth {
  double u = 0.0, v = 0.0;
  double depth = 0.0;
};

// Pinhole projection; throws ContractError for points at or behind the camera.
PixelDepth camera_to_pixel(const CameraIntrinsics& K, const Vec3& pt);

Vec3 transform_point(const PoseTransform& T, const Vec3& pt);

// Inverse projection: lifts pixel (u, v) to the 3D point at the given depth.
Vec3 pixel_to_camera(const CameraIntrinsics& K, double u, double v,
                     double depth);

}  // namespace dh
