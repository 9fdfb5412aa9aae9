#pragma once

#include <string>
#include <variant>

#include "selfcal/geometry.hpp"

namespace selfcal {

enum class JointKind { Revolute, Fixed };

/// One link in classic (distal) DH convention: Rz(theta) Tz(d) Tx(a) Rx(alpha).
/// theta = theta_offset + q for revolute links, theta_offset alone for fixed ones.
struct DHLink {
  double a = 0.0;            // link length [m]
  double d = 0.0;            // link offset [m]
  double alpha = 0.0;        // link twist [rad], normalized to (-pi, pi]
  double theta_offset = 0.0; // joint angle offset [rad], normalized to (-pi, pi]
  JointKind joint_kind = JointKind::Revolute;
  double limit_lo = -M_PI;   // joint limit metadata, never enforced by fk
  double limit_hi = M_PI;
};

/// Fixed or calibratable rigid mounting between frames.
struct MountTransform {
  Pose pose;
  bool calibratable = false;
};

/// Node of the robot frame tree. The root frame is implicit ("root", identity);
/// a frame with parent == "root" hangs directly off it.
struct Frame {
  std::string id;
  std::string parent;
  std::variant<DHLink, MountTransform> local;

  bool is_dh() const { return std::holds_alternative<DHLink>(local); }
  const DHLink& dh() const { return std::get<DHLink>(local); }
  DHLink& dh() { return std::get<DHLink>(local); }
  const MountTransform& mount() const { return std::get<MountTransform>(local); }
  MountTransform& mount() { return std::get<MountTransform>(local); }
};

}  // namespace selfcal
