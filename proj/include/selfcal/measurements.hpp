#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "selfcal/robot_model.hpp"

namespace selfcal {

enum class MeasurementKind { SelfContact, PlaneContact, SelfObservation, External };

std::string kind_name(MeasurementKind k);
std::optional<MeasurementKind> kind_from_name(const std::string& name);

/// Two designated points of the robot touching (fingertip on taxel or marker);
/// a nonzero offset models a finite fingertip radius along the contact line.
struct SelfContactPayload {
  std::string point_a;  // marker id or "patch:taxel"
  std::string point_b;
  double contact_offset = 0.0;  // [m]
};

struct PlaneContactPayload {
  std::string point;  // effector point id
  std::string plane_id;
};

struct SelfObservationPayload {
  std::string camera_id;
  std::string marker_id;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();  // observed (u, v)
};

struct ExternalPayload {
  std::string point;
  std::string device_id;
  Vec3 measured = Vec3::Zero();  // in device frame [m]
};

struct Measurement {
  MeasurementKind kind = MeasurementKind::SelfContact;
  Eigen::VectorXd q;
  std::variant<SelfContactPayload, PlaneContactPayload, SelfObservationPayload,
               ExternalPayload>
      payload;

  /// Residual rows this measurement contributes (3 / 1 / 2 / 3).
  int residual_dim() const;
};

struct Provenance {
  std::string note;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<Measurement> measurements;
  std::map<MeasurementKind, double> sigmas;  // noise std per kind present
  Provenance provenance;

  int size() const { return static_cast<int>(measurements.size()); }
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Collects every violation (record index + field) instead of failing fast.
/// A dataset passing with an empty result never hits id-resolution errors
/// downstream. Structural checks (non-empty, positive sigmas) included.
std::vector<std::string> validate_dataset(const Dataset& dataset,
                                          const RobotModel& model);

/// Stratified random split: per kind, floor(n_kind * fraction) records go to
/// train; deterministic under seed; original record order preserved.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction,
                                  std::uint64_t seed);

/// Workspace split: records whose nominal-model effector/marker position along
/// `axis` (0=x,1=y,2=z) is below the per-kind median go to train.
std::pair<Dataset, Dataset> split_workspace(const Dataset& dataset,
                                            const RobotModel& model, int axis);

/// Convenience CSV import of External measurements: rows `q1..qn,x,y,z`.
Dataset import_external_csv(const std::filesystem::path& path, int joint_count,
                            const std::string& point_id,
                            const std::string& device_id, double sigma);

/// Keep only the given kinds (sigmas filtered accordingly).
Dataset filter_kinds(const Dataset& dataset,
                     const std::vector<MeasurementKind>& kinds);

}  // namespace selfcal
