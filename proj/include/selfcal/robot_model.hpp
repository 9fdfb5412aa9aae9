#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "selfcal/kinecore.hpp"
#include "selfcal/sensemodel.hpp"

namespace selfcal {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Scalar-parameter classes; used for scaling and perturbation magnitudes.
enum class FieldClass { Length, Angle };

/// One scalar slot in the canonical parameter layout.
struct ParamEntry {
  std::string name;  // e.g. "left_1.a", "patch:skin_l.rx", "plane:table.offset"
  FieldClass field_class;
};

/// Robot frame tree plus every chain-closing sensor declared on it.
/// Immutable in use: operations return new models rather than mutating.
struct RobotModel {
  std::vector<Frame> frames;
  std::map<std::string, std::vector<std::string>> named_chains;  // name -> root..frame path
  std::vector<std::uint8_t> calibration_mask;  // one flag per layout scalar

  std::vector<CameraModel> cameras;
  std::vector<MarkerPoint> markers;
  std::vector<TaxelPatch> taxel_patches;
  std::vector<PlaneParam> planes;
  std::vector<ExternalDevice> external_devices;

  int frame_index(const std::string& id) const;          // -1 if unknown
  int joint_count() const;                                // revolute links
  int joint_index(const std::string& frame_id) const;     // -1 if not revolute

  const CameraModel& camera(const std::string& id) const;
  const MarkerPoint& marker(const std::string& id) const;
  const TaxelPatch& patch(const std::string& id) const;
  const PlaneParam& plane(const std::string& id) const;
  const ExternalDevice& device(const std::string& id) const;
};

/// Canonical per-scalar layout: frames (DH 4 / mount 6), then camera mounts,
/// marker positions, patch mounts, planes, device poses. Rotations appear as
/// rotation-vector triples (rx, ry, rz).
std::vector<ParamEntry> parameter_layout(const RobotModel& model);

/// Raw (unscaled) values of every layout scalar.
Eigen::VectorXd layout_values(const RobotModel& model);

/// Write back a full layout vector; angles stored normalized to (-pi, pi].
void set_layout_values(RobotModel& model, const Eigen::VectorXd& raw);

/// Structural validation: tree connected and acyclic, chains are real paths,
/// mask sized to the layout, masked sensor scalars marked calibratable,
/// unit quaternions, finite values. Throws ModelError listing all violations.
void validate_model(const RobotModel& model);

/// Set mask flags by entry name or "<prefix>.*" pattern. Returns flag count set.
int set_mask(RobotModel& model, const std::string& pattern, bool value = true);

/// Flat scaled view of the masked parameters.
struct ParameterVector {
  Eigen::VectorXd values;             // raw / scale
  Eigen::VectorXd scales;             // > 0, one per entry
  std::vector<int> layout_indices;    // entry -> layout scalar
  std::vector<std::string> names;     // entry -> layout name

  int size() const { return static_cast<int>(values.size()); }
};

struct ParameterScales {
  double length = 1.0;  // [m]
  double angle = 1.0;   // [rad]
};

ParameterVector pack(const RobotModel& model, const ParameterScales& scales = {});

/// New model with masked scalars replaced by params; everything else untouched.
RobotModel unpack(const RobotModel& model, const ParameterVector& params);

struct PerturbMagnitudes {
  double length = 0.0;  // [m]
  double angle = 0.0;   // [rad]
};

/// Uniformly offsets every masked scalar within +-magnitude of its field class.
RobotModel perturb(const RobotModel& model, const PerturbMagnitudes& magnitudes,
                   std::uint64_t seed);

/// Pose of target_frame in the root frame. q holds one value per revolute
/// joint of the whole model, ordered by frame declaration.
Pose fk(const RobotModel& model, const Eigen::VectorXd& q,
        const std::string& target_frame);

Pose camera_pose(const RobotModel& model, const Eigen::VectorXd& q,
                 const CameraModel& cam);

Vec3 marker_world(const RobotModel& model, const Eigen::VectorXd& q,
                  const MarkerPoint& marker);

/// fk(patch parent) * mount * taxel local position.
Vec3 taxel_world(const RobotModel& model, const Eigen::VectorXd& q,
                 const std::string& patch_id, int taxel_id);

/// Resolve a point reference: either a marker id or "patch_id:taxel_id".
Vec3 point_world(const RobotModel& model, const Eigen::VectorXd& q,
                 const std::string& point_id);

/// True when point_world(point_id) would resolve.
bool point_exists(const RobotModel& model, const std::string& point_id);

}  // namespace selfcal
