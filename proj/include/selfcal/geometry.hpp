#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace selfcal {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

/// Rigid transform, rotation stored as a unit quaternion.
struct Pose {
  Quat rotation{Quat::Identity()};
  Vec3 translation{Vec3::Zero()};

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose compose(const Pose& other) const {
    return {(rotation * other.rotation).normalized(),
            rotation * other.translation + translation};
  }

  Pose inverse() const {
    Quat qi = rotation.conjugate();
    return {qi, qi * (-translation)};
  }
};

/// Quaternion exponential map: rotation vector (axis * angle) -> unit quaternion.
inline Quat quat_from_rotvec(const Vec3& rv) {
  double angle = rv.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * rv.x(), 0.5 * rv.y(), 0.5 * rv.z());
    return q.normalized();
  }
  return Quat(Eigen::AngleAxisd(angle, rv / angle));
}

/// Quaternion logarithm: unit quaternion -> rotation vector with angle in [0, pi].
inline Vec3 rotvec_from_quat(const Quat& q) {
  Eigen::AngleAxisd aa(q.normalized());
  double angle = aa.angle();
  if (angle > M_PI) angle -= 2.0 * M_PI;  // keep the short representation
  return aa.axis() * angle;
}

/// Normalize an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

/// Classic (distal) Denavit-Hartenberg link transform: Rz(theta) Tz(d) Tx(a) Rx(alpha).
inline Pose dh_transform(double a, double d, double alpha, double theta) {
  Quat rz(Eigen::AngleAxisd(theta, Vec3::UnitZ()));
  Quat rx(Eigen::AngleAxisd(alpha, Vec3::UnitX()));
  Pose p;
  p.rotation = (rz * rx).normalized();
  p.translation = rz * Vec3(a, 0.0, d);
  return p;
}

}  // namespace selfcal
