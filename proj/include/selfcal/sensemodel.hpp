#pragma once

#include <optional>
#include <string>
#include <vector>

#include "selfcal/kinecore.hpp"

namespace selfcal {

/// Pinhole camera without distortion, mounted on a frame of the robot tree.
struct CameraModel {
  std::string id;
  std::string parent;  // frame the camera is mounted on
  MountTransform mount;
  double fx = 0.0, fy = 0.0;  // focal lengths [px]
  double cx = 0.0, cy = 0.0;  // principal point [px]
  int width = 0, height = 0;
};

/// Named point rigidly attached to a link (fiducial marker, fingertip, stylus tip).
struct MarkerPoint {
  std::string id;
  std::string parent;
  Vec3 position = Vec3::Zero();  // in parent link frame [m]
  MountTransform mount;          // optional extra mounting, identity by default
  bool calibratable = false;
};

struct Taxel {
  int id = 0;
  Vec3 position = Vec3::Zero();  // in patch frame [m]
};

/// Artificial-skin patch: a cloud of taxel positions behind one calibratable mount.
struct TaxelPatch {
  std::string id;
  std::string parent;
  MountTransform mount;
  std::vector<Taxel> taxels;
};

/// Plane in minimal spherical parametrization; the unit normal is derived,
/// never stored, so no constraint enters the optimization.
struct PlaneParam {
  std::string id;
  double normal_azimuth = 0.0;   // [rad]
  double normal_elevation = 0.0; // [rad]
  double offset = 0.0;           // signed distance from origin [m]
  bool calibratable = false;
};

/// External metrology device (laser tracker, mocap) with its own frame.
struct ExternalDevice {
  std::string id;
  Pose pose;  // root -> device
  double noise_sigma = 0.0;  // [m]
  bool calibratable = false;
};

/// n = (cos e cos a, cos e sin a, sin e); unit by construction.
inline Vec3 plane_normal(const PlaneParam& plane) {
  double a = plane.normal_azimuth, e = plane.normal_elevation;
  return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
}

/// Pinhole projection of a camera-frame point. Empty when the point is at or
/// behind the image plane; callers must count such rejections, not drop them.
inline std::optional<Eigen::Vector2d> project(const CameraModel& cam,
                                              const Vec3& point_in_camera) {
  if (!(point_in_camera.z() > 0.0)) return std::nullopt;
  double inv_z = 1.0 / point_in_camera.z();
  return Eigen::Vector2d(cam.fx * point_in_camera.x() * inv_z + cam.cx,
                         cam.fy * point_in_camera.y() * inv_z + cam.cy);
}

}  // namespace selfcal
