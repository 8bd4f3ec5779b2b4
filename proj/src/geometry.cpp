#include "dh/geometry.hpp"

#include <cmath>

namespace dh {

void CameraIntrinsics::validate() const {
  if (fx <= 0.0 || fy <= 0.0)
    throw ConfigError("camera.fx/fy must be positive");
  if (width <= 0 || height <= 0)
    throw ConfigError("camera.width/height must be positive");
  if (cx < 0.0 || cx >= static_cast<double>(width))
    throw ConfigError("camera.cx must lie in [0, width)");
  if (cy < 0.0 || cy >= static_cast<double>(height))
    throw ConfigError("camera.cy must lie in [0, height)");
}

PoseTransform PoseTransform::stereo_baseline(double baseline) {
  PoseTransform t;
  t.translation = {-baseline, 0.0, 0.0};
  return t;
}

PoseTransform PoseTransform::inverse() const {
  PoseTransform inv;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv.rotation[i * 3 + j] = rotation[j * 3 + i];
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) acc += inv.rotation[i * 3 + j] * translation[j];
    inv.translation[i] = -acc;
  }
  return inv;
}

bool PoseTransform::is_identity() const {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (rotation[i * 3 + j] != (i == j ? 1.0 : 0.0)) return false;
  return translation[0] == 0.0 && translation[1] == 0.0 &&
         translation[2] == 0.0;
}

void PoseTransform::validate(double tol) const {
  const auto& r = rotation;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
      const double want = (i == j) ? 1.0 : 0.0;
      if (std::fabs(dot - want) > tol)
        throw ConfigError("pose.rotation is not orthonormal");
    }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                     r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::fabs(det - 1.0) > tol)
    throw ConfigError("pose.rotation determinant must be +1");
}

Vec3 board_to_camera(const BoardPlacement& p, double u, double v) {
  const double x = p.physical_w / static_cast<double>(p.board_w) * u -
                   p.physical_w / 2.0;
  const double y = p.physical_h / static_cast<double>(p.board_h) * v -
                   p.physical_h / 2.0;
  const double ca = std::cos(p.alpha), sa = std::sin(p.alpha);
  return {ca * x, y, sa * x + p.z_c};
}

PixelDepth camera_to_pixel(const CameraIntrinsics& K, const Vec3& pt) {
  if (pt.z <= 0.0)
    throw ContractError("camera_to_pixel: point is behind the camera");
  return {K.fx * pt.x / pt.z + K.cx, K.fy * pt.y / pt.z + K.cy, pt.z};
}

Vec3 transform_point(const PoseTransform& T, const Vec3& pt) {
  const auto& r = T.rotation;
  return {r[0] * pt.x + r[1] * pt.y + r[2] * pt.z + T.translation[0],
          r[3] * pt.x + r[4] * pt.y + r[5] * pt.z + T.translation[1],
          r[6] * pt.x + r[7] * pt.y + r[8] * pt.z + T.translation[2]};
}

Vec3 pixel_to_camera(const CameraIntrinsics& K, double u, double v,
                     double depth) {
  if (depth <= 0.0) throw ContractError("pixel_to_camera: depth must be > 0");
  return {(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth};
}

}  // namespace dh
