#include "selfcal/robot_model.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

namespace selfcal {

int RobotModel::frame_index(const std::string& id) const {
  for (size_t i = 0; i < frames.size(); ++i)
    if (frames[i].id == id) return static_cast<int>(i);
  return -1;
}

int RobotModel::joint_count() const {
  int n = 0;
  for (const auto& f : frames)
    if (f.is_dh() && f.dh().joint_kind == JointKind::Revolute) ++n;
  return n;
}

int RobotModel::joint_index(const std::string& frame_id) const {
  int n = 0;
  for (const auto& f : frames) {
    if (f.is_dh() && f.dh().joint_kind == JointKind::Revolute) {
      if (f.id == frame_id) return n;
      ++n;
    } else if (f.id == frame_id) {
      return -1;
    }
  }
  return -1;
}

namespace {

template <typename T>
const T& find_by_id(const std::vector<T>& items, const std::string& id,
                    const char* what) {
  for (const auto& item : items)
    if (item.id == id) return item;
  throw ModelError(std::string("unknown ") + what + " id: " + id);
}

// Single source of truth for the scalar layout. Walks every parameter block in
// canonical order; any of the three outputs may be null.
void walk_layout(RobotModel& model, std::vector<ParamEntry>* layout,
                 Eigen::VectorXd* read, const Eigen::VectorXd* write) {
  int k = 0;
  auto scalar = [&](const std::string& name, FieldClass fc, double& ref,
                    bool wrap = false) {
    if (layout) layout->push_back({name, fc});
    if (read) (*read)(k) = ref;
    if (write) ref = wrap ? wrap_angle((*write)(k)) : (*write)(k);
    ++k;
  };
  auto pose_block = [&](const std::string& prefix, Pose& p) {
    scalar(prefix + ".tx", FieldClass::Length, p.translation.x());
    scalar(prefix + ".ty", FieldClass::Length, p.translation.y());
    scalar(prefix + ".tz", FieldClass::Length, p.translation.z());
    Vec3 rv = rotvec_from_quat(p.rotation);
    const Vec3 rv_in = rv;
    scalar(prefix + ".rx", FieldClass::Angle, rv.x());
    scalar(prefix + ".ry", FieldClass::Angle, rv.y());
    scalar(prefix + ".rz", FieldClass::Angle, rv.z());
    // rebuild only on change: the log/exp round trip is not bit-exact
    if (write && (rv.array() != rv_in.array()).any())
      p.rotation = quat_from_rotvec(rv);
  };

  for (auto& f : model.frames) {
    if (f.is_dh()) {
      DHLink& l = f.dh();
      scalar(f.id + ".a", FieldClass::Length, l.a);
      scalar(f.id + ".d", FieldClass::Length, l.d);
      scalar(f.id + ".alpha", FieldClass::Angle, l.alpha, true);
      scalar(f.id + ".theta", FieldClass::Angle, l.theta_offset, true);
    } else {
      pose_block(f.id, f.mount().pose);
    }
  }
  for (auto& c : model.cameras) pose_block("camera:" + c.id, c.mount.pose);
  for (auto& m : model.markers) {
    scalar("marker:" + m.id + ".x", FieldClass::Length, m.position.x());
    scalar("marker:" + m.id + ".y", FieldClass::Length, m.position.y());
    scalar("marker:" + m.id + ".z", FieldClass::Length, m.position.z());
  }
  for (auto& p : model.taxel_patches) pose_block("patch:" + p.id, p.mount.pose);
  for (auto& p : model.planes) {
    scalar("plane:" + p.id + ".azimuth", FieldClass::Angle, p.normal_azimuth);
    scalar("plane:" + p.id + ".elevation", FieldClass::Angle, p.normal_elevation);
    scalar("plane:" + p.id + ".offset", FieldClass::Length, p.offset);
  }
  for (auto& d : model.external_devices) pose_block("device:" + d.id, d.pose);
}

int layout_size(const RobotModel& model) {
  std::vector<ParamEntry> layout;
  walk_layout(const_cast<RobotModel&>(model), &layout, nullptr, nullptr);
  return static_cast<int>(layout.size());
}

// Whether a masked layout scalar is gated by a calibratable flag.
bool mask_allowed(const RobotModel& model, const std::string& name) {
  auto owner = name.substr(0, name.find('.'));
  auto colon = owner.find(':');
  if (colon == std::string::npos) {
    int idx = model.frame_index(owner);
    if (idx < 0) return false;
    return model.frames[idx].is_dh() || model.frames[idx].mount().calibratable;
  }
  std::string kind = owner.substr(0, colon), id = owner.substr(colon + 1);
  if (kind == "camera") return find_by_id(model.cameras, id, "camera").mount.calibratable;
  if (kind == "marker") return find_by_id(model.markers, id, "marker").calibratable;
  if (kind == "patch") return find_by_id(model.taxel_patches, id, "patch").mount.calibratable;
  if (kind == "plane") return find_by_id(model.planes, id, "plane").calibratable;
  if (kind == "device") return find_by_id(model.external_devices, id, "device").calibratable;
  return false;
}

}  // namespace

const CameraModel& RobotModel::camera(const std::string& id) const {
  return find_by_id(cameras, id, "camera");
}
const MarkerPoint& RobotModel::marker(const std::string& id) const {
  return find_by_id(markers, id, "marker");
}
const TaxelPatch& RobotModel::patch(const std::string& id) const {
  return find_by_id(taxel_patches, id, "patch");
}
const PlaneParam& RobotModel::plane(const std::string& id) const {
  return find_by_id(planes, id, "plane");
}
const ExternalDevice& RobotModel::device(const std::string& id) const {
  return find_by_id(external_devices, id, "device");
}

std::vector<ParamEntry> parameter_layout(const RobotModel& model) {
  std::vector<ParamEntry> layout;
  walk_layout(const_cast<RobotModel&>(model), &layout, nullptr, nullptr);
  return layout;
}

Eigen::VectorXd layout_values(const RobotModel& model) {
  Eigen::VectorXd raw(layout_size(model));
  walk_layout(const_cast<RobotModel&>(model), nullptr, &raw, nullptr);
  return raw;
}

void set_layout_values(RobotModel& model, const Eigen::VectorXd& raw) {
  if (raw.size() != layout_size(model))
    throw ModelError("layout vector length mismatch");
  walk_layout(model, nullptr, nullptr, &raw);
}

void validate_model(const RobotModel& model) {
  std::vector<std::string> errors;

  std::set<std::string> ids;
  for (const auto& f : model.frames) {
    if (f.id.empty() || f.id == "root") errors.push_back("invalid frame id '" + f.id + "'");
    if (!ids.insert(f.id).second) errors.push_back("duplicate frame id '" + f.id + "'");
  }
  // connectivity and acyclicity: every frame must reach root through declared parents
  for (const auto& f : model.frames) {
    std::set<std::string> seen{f.id};
    std::string cur = f.parent;
    while (cur != "root") {
      if (!seen.insert(cur).second) {
        errors.push_back("cycle through frame '" + f.id + "'");
        break;
      }
      int idx = model.frame_index(cur);
      if (idx < 0) {
        errors.push_back("frame '" + f.id + "' has unreachable parent '" + cur + "'");
        break;
      }
      cur = model.frames[idx].parent;
    }
    if (!f.is_dh()) {
      double n = f.mount().pose.rotation.norm();
      if (std::abs(n - 1.0) > 1e-9)
        errors.push_back("frame '" + f.id + "' mount quaternion not unit");
    } else {
      const DHLink& l = f.dh();
      if (!std::isfinite(l.a) || !std::isfinite(l.d) || !std::isfinite(l.alpha) ||
          !std::isfinite(l.theta_offset))
        errors.push_back("frame '" + f.id + "' has non-finite DH parameters");
    }
  }
  for (const auto& [name, path] : model.named_chains) {
    if (path.empty()) {
      errors.push_back("chain '" + name + "' is empty");
      continue;
    }
    // must be a root-to-frame path: each element's parent is the previous one
    std::string expected_parent = "root";
    for (const auto& id : path) {
      int idx = model.frame_index(id);
      if (idx < 0) {
        errors.push_back("chain '" + name + "' references unknown frame '" + id + "'");
        break;
      }
      if (model.frames[idx].parent != expected_parent) {
        errors.push_back("chain '" + name + "' is not a root-to-frame path at '" + id + "'");
        break;
      }
      expected_parent = id;
    }
  }
  for (const auto& c : model.cameras) {
    if (!(c.fx > 0.0) || !(c.fy > 0.0))
      errors.push_back("camera '" + c.id + "' needs positive focal lengths");
    if (c.cx < 0 || c.cx > c.width || c.cy < 0 || c.cy > c.height)
      errors.push_back("camera '" + c.id + "' principal point outside image");
    if (model.frame_index(c.parent) < 0)
      errors.push_back("camera '" + c.id + "' mounted on unknown frame '" + c.parent + "'");
  }
  for (const auto& m : model.markers)
    if (model.frame_index(m.parent) < 0)
      errors.push_back("marker '" + m.id + "' on unknown frame '" + m.parent + "'");
  for (const auto& p : model.taxel_patches) {
    if (p.taxels.empty()) errors.push_back("patch '" + p.id + "' has no taxels");
    std::set<int> tids;
    for (const auto& t : p.taxels)
      if (!tids.insert(t.id).second)
        errors.push_back("patch '" + p.id + "' has duplicate taxel id");
    if (model.frame_index(p.parent) < 0)
      errors.push_back("patch '" + p.id + "' on unknown frame '" + p.parent + "'");
  }
  for (const auto& d : model.external_devices)
    if (std::abs(d.pose.rotation.norm() - 1.0) > 1e-9)
      errors.push_back("device '" + d.id + "' quaternion not unit");

  auto layout = parameter_layout(model);
  if (model.calibration_mask.size() != layout.size()) {
    errors.push_back("calibration mask length " +
                     std::to_string(model.calibration_mask.size()) +
                     " != parameter count " + std::to_string(layout.size()));
  } else {
    for (size_t i = 0; i < layout.size(); ++i)
      if (model.calibration_mask[i] && !mask_allowed(model, layout[i].name))
        errors.push_back("masked parameter '" + layout[i].name +
                         "' is not calibratable");
  }

  if (!errors.empty()) {
    std::ostringstream oss;
    oss << "invalid robot model:";
    for (const auto& e : errors) oss << "\n  - " << e;
    throw ModelError(oss.str());
  }
}

int set_mask(RobotModel& model, const std::string& pattern, bool value) {
  auto layout = parameter_layout(model);
  if (model.calibration_mask.size() != layout.size())
    model.calibration_mask.assign(layout.size(), 0);
  bool prefix = pattern.size() > 1 && pattern.substr(pattern.size() - 2) == ".*";
  std::string stem = prefix ? pattern.substr(0, pattern.size() - 1) : pattern;
  int n = 0;
  for (size_t i = 0; i < layout.size(); ++i) {
    const auto& name = layout[i].name;
    bool hit = pattern == "*" || name == pattern ||
               (prefix && name.rfind(stem, 0) == 0);
    if (hit) {
      model.calibration_mask[i] = value ? 1 : 0;
      ++n;
    }
  }
  if (n == 0) throw ModelError("mask pattern matched nothing: " + pattern);
  return n;
}

ParameterVector pack(const RobotModel& model, const ParameterScales& scales) {
  if (!(scales.length > 0.0) || !(scales.angle > 0.0))
    throw ModelError("parameter scales must be positive");
  auto layout = parameter_layout(model);
  if (model.calibration_mask.size() != layout.size())
    throw ModelError("calibration mask length mismatch");
  Eigen::VectorXd raw = layout_values(model);

  ParameterVector pv;
  std::vector<double> vals, scl;
  for (size_t i = 0; i < layout.size(); ++i) {
    if (!model.calibration_mask[i]) continue;
    double s = layout[i].field_class == FieldClass::Length ? scales.length
                                                           : scales.angle;
    vals.push_back(raw(static_cast<int>(i)) / s);
    scl.push_back(s);
    pv.layout_indices.push_back(static_cast<int>(i));
    pv.names.push_back(layout[i].name);
  }
  pv.values = Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size());
  pv.scales = Eigen::Map<Eigen::VectorXd>(scl.data(), scl.size());
  return pv;
}

RobotModel unpack(const RobotModel& model, const ParameterVector& params) {
  if (params.values.size() != params.scales.size() ||
      static_cast<size_t>(params.values.size()) != params.layout_indices.size())
    throw ModelError("inconsistent parameter vector");
  RobotModel out = model;
  Eigen::VectorXd raw = layout_values(out);
  for (int i = 0; i < params.size(); ++i) {
    int li = params.layout_indices[i];
    if (li < 0 || li >= raw.size()) throw ModelError("parameter index out of range");
    raw(li) = params.values(i) * params.scales(i);
  }
  set_layout_values(out, raw);
  return out;
}

RobotModel perturb(const RobotModel& model, const PerturbMagnitudes& magnitudes,
                   std::uint64_t seed) {
  if (magnitudes.length < 0.0 || magnitudes.angle < 0.0)
    throw ModelError("perturbation magnitudes must be non-negative");
  auto layout = parameter_layout(model);
  if (model.calibration_mask.size() != layout.size())
    throw ModelError("calibration mask length mismatch");

  std::mt19937_64 rng(seed);
  RobotModel out = model;
  Eigen::VectorXd raw = layout_values(out);
  for (size_t i = 0; i < layout.size(); ++i) {
    if (!model.calibration_mask[i]) continue;
    double mag = layout[i].field_class == FieldClass::Length ? magnitudes.length
                                                             : magnitudes.angle;
    std::uniform_real_distribution<double> u(-mag, mag);
    raw(static_cast<int>(i)) += u(rng);
  }
  set_layout_values(out, raw);
  return out;
}

Pose fk(const RobotModel& model, const Eigen::VectorXd& q,
        const std::string& target_frame) {
  if (q.size() != model.joint_count())
    throw ModelError("q length " + std::to_string(q.size()) + " != joint count " +
                     std::to_string(model.joint_count()));
  if (!q.allFinite()) throw ModelError("non-finite joint value");
  if (target_frame == "root") return Pose::identity();

  // collect the root -> target path
  std::vector<int> path;
  std::string cur = target_frame;
  while (cur != "root") {
    int idx = model.frame_index(cur);
    if (idx < 0) throw ModelError("unknown frame id: " + cur);
    path.push_back(idx);
    cur = model.frames[idx].parent;
    if (path.size() > model.frames.size()) throw ModelError("frame tree cycle at " + cur);
  }

  Pose pose = Pose::identity();
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const Frame& f = model.frames[*it];
    if (f.is_dh()) {
      const DHLink& l = f.dh();
      if (!std::isfinite(l.a) || !std::isfinite(l.d) || !std::isfinite(l.alpha) ||
          !std::isfinite(l.theta_offset))
        throw ModelError("non-finite DH parameter in frame " + f.id);
      double theta = l.theta_offset;
      if (l.joint_kind == JointKind::Revolute) theta += q(model.joint_index(f.id));
      pose = pose.compose(dh_transform(l.a, l.d, l.alpha, theta));
    } else {
      pose = pose.compose(f.mount().pose);
    }
  }
  return pose;
}

Pose camera_pose(const RobotModel& model, const Eigen::VectorXd& q,
                 const CameraModel& cam) {
  return fk(model, q, cam.parent).compose(cam.mount.pose);
}

Vec3 marker_world(const RobotModel& model, const Eigen::VectorXd& q,
                  const MarkerPoint& marker) {
  return fk(model, q, marker.parent).compose(marker.mount.pose).apply(marker.position);
}

Vec3 taxel_world(const RobotModel& model, const Eigen::VectorXd& q,
                 const std::string& patch_id, int taxel_id) {
  const TaxelPatch& p = model.patch(patch_id);
  for (const auto& t : p.taxels)
    if (t.id == taxel_id)
      return fk(model, q, p.parent).compose(p.mount.pose).apply(t.position);
  throw ModelError("unknown taxel id " + std::to_string(taxel_id) + " in patch " +
                   patch_id);
}

Vec3 point_world(const RobotModel& model, const Eigen::VectorXd& q,
                 const std::string& point_id) {
  auto colon = point_id.find(':');
  if (colon != std::string::npos)
    return taxel_world(model, q, point_id.substr(0, colon),
                       std::stoi(point_id.substr(colon + 1)));
  return marker_world(model, q, model.marker(point_id));
}

bool point_exists(const RobotModel& model, const std::string& point_id) {
  auto colon = point_id.find(':');
  try {
    if (colon != std::string::npos) {
      const TaxelPatch& p = model.patch(point_id.substr(0, colon));
      int tid = std::stoi(point_id.substr(colon + 1));
      return std::any_of(p.taxels.begin(), p.taxels.end(),
                         [tid](const Taxel& t) { return t.id == tid; });
    }
    model.marker(point_id);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace selfcal
