#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "selfcal/measurements.hpp"
#include "selfcal/robot_model.hpp"

namespace selfcal {

struct EstimatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// p_A(q) - p_B(q) - offset * u, u the unit vector from B to A. [m]
Vec3 residual_self_contact(const RobotModel& model, const Measurement& m);

/// n(plane) . p_eff(q) - plane offset. [m]
double residual_plane(const RobotModel& model, const Measurement& m);

/// project(camera, marker in camera frame) - observed pixel; empty when the
/// marker is behind the camera. [px]
std::optional<Eigen::Vector2d> residual_projection(const RobotModel& model,
                                                   const Measurement& m);

/// device_pose^-1 (p_eff(q)) - measured point, in the device frame. [m]
Vec3 residual_external(const RobotModel& model, const Measurement& m);

enum class JacobianMode { ForwardDiff, CentralDiff };

struct MeasurementBlock {
  int measurement_index;
  int row_begin;
  int rows;
  MeasurementKind kind;
};

/// Stacked 1/sigma-weighted residuals and Jacobian w.r.t. the scaled params.
struct ResidualSystem {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  std::vector<MeasurementBlock> blocks;
  int excluded = 0;  // behind-camera records dropped at this linearization point
};

/// Evaluates every measurement in dataset order (fixed stacking order, so the
/// result is identical however the evaluation is scheduled). Finite-difference
/// step per scaled parameter: h = max(1e-6, 1e-7 |x|).
ResidualSystem build_system(const RobotModel& model, const ParameterVector& params,
                            const Dataset& dataset,
                            JacobianMode mode = JacobianMode::ForwardDiff);

enum class RobustLoss { None, Huber };

struct SolveOptions {
  int max_iterations = 200;
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double gradient_tol = 1e-10;
  double step_tol = 1e-12;
  double cost_tol = 1e-12;
  JacobianMode jacobian_mode = JacobianMode::ForwardDiff;
  RobustLoss robust_loss = RobustLoss::None;
  double huber_delta = 1.0;
  ParameterScales scales;
};

enum class TerminationReason { GradientTol, StepTol, CostTol, MaxIterations, Aborted };

std::string termination_name(TerminationReason r);

/// Residual evaluation; fills J (rows x dim(x)) only when non-null.
using ResidualJacobianFn =
    std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J)>;

struct LMSummary {
  Eigen::VectorXd x;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  TerminationReason termination = TerminationReason::MaxIterations;
  std::vector<double> accepted_costs;  // strictly decreasing by construction
};

/// Generic damped least squares on any residual function (Marquardt scaling,
/// optional component-wise Huber loss). lm_solve is this core applied to
/// build_system.
LMSummary lm_minimize(const ResidualJacobianFn& fn, const Eigen::VectorXd& x0,
                      const SolveOptions& opts = {});

struct CalibrationResult {
  ParameterVector params_opt;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::map<MeasurementKind, double> rms_per_kind;  // native units
  int iterations = 0;
  TerminationReason termination = TerminationReason::MaxIterations;
  std::optional<Eigen::MatrixXd> covariance;  // sigma^2 (J^T J)^-1 when well-conditioned
  int excluded_measurements = 0;
};

/// Levenberg-Marquardt with Marquardt scaling:
/// (J^T J + lambda diag(J^T J)) dx = -J^T r, accept only on cost decrease.
CalibrationResult lm_solve(const RobotModel& model, const Dataset& dataset,
                           const ParameterVector& x0, const SolveOptions& opts = {});

/// Per-kind RMS of the raw (unweighted, native-unit) residuals of `model`
/// over `dataset`. Behind-camera records are skipped and counted.
std::map<MeasurementKind, double> residual_rms(const RobotModel& model,
                                               const Dataset& dataset,
                                               int* excluded = nullptr);

/// JSON report: costs, per-kind RMS, iterations, termination, parameter table
/// with before/after values and units.
std::string result_to_json(const CalibrationResult& result, const RobotModel& before,
                           const ParameterVector& x0);

}  // namespace selfcal
