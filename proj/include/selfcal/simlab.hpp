#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfcal/measurements.hpp"
#include "selfcal/robot_model.hpp"

namespace selfcal {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Where synthesized measurements of each kind attach to the robot.
struct SelfContactTargets {
  std::string point_a;               // moving effector point (marker id)
  std::vector<std::string> targets;  // patch ids or point ids on the other chain
};
struct PlaneTargets {
  std::string point;
  std::vector<std::string> planes;
};
struct ObservationTargets {
  std::vector<std::string> cameras;
  std::vector<std::string> markers;
};
struct ExternalTargets {
  std::string point;
  std::vector<std::string> devices;
};

struct ScenarioSpec {
  std::string robot;  // "desk_rig" or a robot JSON path
  std::vector<std::string> mask;  // parameter name patterns to calibrate
  PerturbMagnitudes perturbation;
  std::map<MeasurementKind, int> counts;
  std::map<MeasurementKind, double> sigmas;  // >= 0; 0 = noiseless
  double contact_tolerance = 1e-6;           // [m]
  std::uint64_t seed = 0;
  double outlier_rate = 0.0;       // fraction of gross errors (Huber exercise)
  double outlier_magnitude = 0.0;  // uniform error bound, native units
  SelfContactTargets self_contact;
  PlaneTargets plane_contact;
  ObservationTargets self_observation;
  ExternalTargets external;
};

ScenarioSpec load_scenario(const std::filesystem::path& path);
ScenarioSpec scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioSpec& spec);
std::string scenario_hash(const ScenarioSpec& spec);  // FNV-1a over canonical JSON

/// Dual-arm desk robot: two 6-DoF arms on a torso, head camera, one 4x4 taxel
/// patch per forearm, fingertip and forearm markers, a table plane and an
/// external tracker. No mask set; scenarios choose what to calibrate.
RobotModel desk_rig();

/// Resolve spec.robot ("desk_rig" or file path, relative to base_dir).
RobotModel load_scenario_robot(const ScenarioSpec& spec,
                               const std::filesystem::path& base_dir = {});

/// i.i.d. uniform configurations within the model's joint-limit metadata.
std::vector<Eigen::VectorXd> sample_configurations(const RobotModel& model, int n,
                                                   std::uint64_t seed);

struct ContactSolveResult {
  bool success = false;
  Eigen::VectorXd q;
  double distance = 0.0;  // |p_a - p_b - target_gap| at q
};

/// Finds q within joint limits with p_a(q) - p_b(q) = target_gap to within
/// eps, by damped Gauss-Newton from up to `restarts` random starts.
ContactSolveResult solve_contact_configuration(
    const RobotModel& model, const std::string& point_a, const std::string& point_b,
    double eps, std::uint64_t seed, const Vec3& target_gap = Vec3::Zero(),
    int restarts = 20);

/// Same machinery for a signed plane distance target.
ContactSolveResult solve_plane_contact_configuration(
    const RobotModel& model, const std::string& point, const std::string& plane_id,
    double eps, std::uint64_t seed, double target_distance = 0.0, int restarts = 20);

struct SynthesisResult {
  RobotModel nominal;
  RobotModel ground_truth;
  Dataset dataset;
  std::map<MeasurementKind, int> shortfall;  // requested - generated
};

/// model_true = perturb(nominal); measurements generated with model_true and
/// corrupted with the spec sigmas. Contact kinds absorb the noise as the
/// targeted closure gap. Random streams are split per measurement index, so
/// the output is independent of generation order.
SynthesisResult synthesize(const ScenarioSpec& spec, const RobotModel& nominal);
SynthesisResult synthesize(const ScenarioSpec& spec,
                           const std::filesystem::path& base_dir = {});

/// First `count` records of each requested kind (matched-count campaigns).
Dataset subsample(const Dataset& dataset, const std::map<MeasurementKind, int>& counts);

}  // namespace selfcal
