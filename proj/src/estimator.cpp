#include "selfcal/estimator.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <json.hpp>

namespace selfcal {

Vec3 residual_self_contact(const RobotModel& model, const Measurement& m) {
  const auto& p = std::get<SelfContactPayload>(m.payload);
  Vec3 pa = point_world(model, m.q, p.point_a);
  Vec3 pb = point_world(model, m.q, p.point_b);
  Vec3 diff = pa - pb;
  if (p.contact_offset != 0.0) {
    double n = diff.norm();
    if (n > 1e-12) diff -= p.contact_offset * diff / n;  // offset ignored at coincidence
  }
  return diff;
}

double residual_plane(const RobotModel& model, const Measurement& m) {
  const auto& p = std::get<PlaneContactPayload>(m.payload);
  const PlaneParam& plane = model.plane(p.plane_id);
  return plane_normal(plane).dot(point_world(model, m.q, p.point)) - plane.offset;
}

std::optional<Eigen::Vector2d> residual_projection(const RobotModel& model,
                                                   const Measurement& m) {
  const auto& p = std::get<SelfObservationPayload>(m.payload);
  const CameraModel& cam = model.camera(p.camera_id);
  Vec3 marker = marker_world(model, m.q, model.marker(p.marker_id));
  Vec3 in_cam = camera_pose(model, m.q, cam).inverse().apply(marker);
  auto px = project(cam, in_cam);
  if (!px) return std::nullopt;
  return *px - p.pixel;
}

Vec3 residual_external(const RobotModel& model, const Measurement& m) {
  const auto& p = std::get<ExternalPayload>(m.payload);
  Vec3 eff = point_world(model, m.q, p.point);
  return model.device(p.device_id).pose.inverse().apply(eff) - p.measured;
}

namespace {

// Weighted residual of one measurement; empty when invalid (behind camera).
std::optional<Eigen::VectorXd> eval_block(const RobotModel& model,
                                          const Measurement& m, double inv_sigma) {
  Eigen::VectorXd out;
  switch (m.kind) {
    case MeasurementKind::SelfContact:
      out = residual_self_contact(model, m);
      break;
    case MeasurementKind::PlaneContact:
      out = Eigen::VectorXd::Constant(1, residual_plane(model, m));
      break;
    case MeasurementKind::SelfObservation: {
      auto r = residual_projection(model, m);
      if (!r) return std::nullopt;
      out = *r;
      break;
    }
    case MeasurementKind::External:
      out = residual_external(model, m);
      break;
  }
  return (out * inv_sigma).eval();
}

double sigma_for(const Dataset& dataset, MeasurementKind kind) {
  auto it = dataset.sigmas.find(kind);
  if (it == dataset.sigmas.end() || !(it->second > 0.0))
    throw EstimatorError("no positive sigma for kind '" + kind_name(kind) + "'");
  return it->second;
}

}  // namespace

ResidualSystem build_system(const RobotModel& model, const ParameterVector& params,
                            const Dataset& dataset, JacobianMode mode) {
  const int n = params.size();
  RobotModel base = unpack(model, params);

  // base evaluation fixes which measurements are active and the row layout
  ResidualSystem sys;
  std::vector<Eigen::VectorXd> base_blocks(dataset.measurements.size());
  std::vector<char> active(dataset.measurements.size(), 0);
  int rows = 0;
  for (size_t i = 0; i < dataset.measurements.size(); ++i) {
    const auto& m = dataset.measurements[i];
    auto blk = eval_block(base, m, 1.0 / sigma_for(dataset, m.kind));
    if (!blk) {
      ++sys.excluded;
      continue;
    }
    active[i] = 1;
    base_blocks[i] = *blk;
    sys.blocks.push_back({static_cast<int>(i), rows, m.residual_dim(), m.kind});
    rows += m.residual_dim();
  }
  if (rows == 0) throw EstimatorError("empty residual system: no valid measurement");

  sys.r.resize(rows);
  for (const auto& b : sys.blocks)
    sys.r.segment(b.row_begin, b.rows) = base_blocks[b.measurement_index];

  auto stack_at = [&](const ParameterVector& x) {
    RobotModel trial = unpack(model, x);
    Eigen::VectorXd out(rows);
    for (const auto& b : sys.blocks) {
      const auto& m = dataset.measurements[b.measurement_index];
      auto blk = eval_block(trial, m, 1.0 / sigma_for(dataset, m.kind));
      // a record pushed out of view by the probe step contributes no slope
      out.segment(b.row_begin, b.rows) = blk ? *blk : base_blocks[b.measurement_index];
    }
    return out;
  };

  sys.J.resize(rows, n);
  ParameterVector x = params;
  for (int j = 0; j < n; ++j) {
    double xj = params.values(j);
    double h = std::max(1e-6, 1e-7 * std::abs(xj));
    if (mode == JacobianMode::ForwardDiff) {
      x.values(j) = xj + h;
      sys.J.col(j) = (stack_at(x) - sys.r) / h;
    } else {
      x.values(j) = xj + h;
      Eigen::VectorXd plus = stack_at(x);
      x.values(j) = xj - h;
      sys.J.col(j) = (plus - stack_at(x)) / (2.0 * h);
    }
    x.values(j) = xj;
  }
  return sys;
}

std::string termination_name(TerminationReason r) {
  switch (r) {
    case TerminationReason::GradientTol: return "gradient_tol";
    case TerminationReason::StepTol: return "step_tol";
    case TerminationReason::CostTol: return "cost_tol";
    case TerminationReason::MaxIterations: return "max_iterations";
    case TerminationReason::Aborted: return "aborted";
  }
  return "unknown";
}

namespace {

// Component-wise Huber rho; plain half-squares when the loss is off.
double robust_cost(const Eigen::VectorXd& r, const SolveOptions& opts) {
  if (opts.robust_loss == RobustLoss::None) return 0.5 * r.squaredNorm();
  double delta = opts.huber_delta, c = 0.0;
  for (int i = 0; i < r.size(); ++i) {
    double a = std::abs(r(i));
    c += a <= delta ? 0.5 * a * a : delta * a - 0.5 * delta * delta;
  }
  return c;
}

// IRLS weights: sqrt(rho'(r)/r) per component.
Eigen::VectorXd robust_sqrt_weights(const Eigen::VectorXd& r, const SolveOptions& opts) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(r.size());
  if (opts.robust_loss == RobustLoss::None) return w;
  for (int i = 0; i < r.size(); ++i) {
    double a = std::abs(r(i));
    if (a > opts.huber_delta) w(i) = std::sqrt(opts.huber_delta / a);
  }
  return w;
}

}  // namespace

LMSummary lm_minimize(const ResidualJacobianFn& fn, const Eigen::VectorXd& x0,
                      const SolveOptions& opts) {
  if (!x0.allFinite()) throw EstimatorError("x0 contains non-finite values");
  if (!(opts.lambda_up > 1.0) || !(opts.lambda_down > 1.0))
    throw EstimatorError("lambda factors must exceed 1");
  if (!(opts.gradient_tol > 0.0) || !(opts.step_tol > 0.0) || !(opts.cost_tol > 0.0))
    throw EstimatorError("tolerances must be positive");

  LMSummary out;
  Eigen::VectorXd x = x0;
  double lambda = opts.lambda0;

  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  fn(x, r, &J);
  double cost = robust_cost(r, opts);
  if (!std::isfinite(cost)) throw EstimatorError("non-finite cost at x0");
  out.initial_cost = cost;

  int iter = 0;
  bool done = false;
  out.termination = TerminationReason::MaxIterations;
  while (!done && iter < opts.max_iterations) {
    Eigen::VectorXd w = robust_sqrt_weights(r, opts);
    Eigen::MatrixXd Jw = w.asDiagonal() * J;
    Eigen::VectorXd rw = w.cwiseProduct(r);
    Eigen::VectorXd g = Jw.transpose() * rw;
    if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tol) {
      out.termination = TerminationReason::GradientTol;
      break;
    }
    Eigen::MatrixXd JtJ = Jw.transpose() * Jw;
    Eigen::VectorXd diag = JtJ.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    while (!accepted && !done) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * diag;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      Eigen::VectorXd dx;
      bool solve_ok = ldlt.info() == Eigen::Success;
      if (solve_ok) {
        dx = ldlt.solve(-g);
        solve_ok = dx.allFinite();
      }
      if (!solve_ok) {
        lambda *= opts.lambda_up;
        if (lambda > 1e16) {
          out.termination = TerminationReason::Aborted;
          done = true;
        }
        continue;
      }

      Eigen::VectorXd xt = x + dx;
      Eigen::VectorXd rt;
      double trial_cost;
      try {
        fn(xt, rt, nullptr);
        trial_cost = robust_cost(rt, opts);
      } catch (const std::exception&) {
        trial_cost = std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(trial_cost)) trial_cost = std::numeric_limits<double>::infinity();

      if (trial_cost < cost) {
        double rel_decrease = (cost - trial_cost) / std::max(cost, 1e-300);
        double rel_step = dx.norm() / std::max(x.norm(), 1e-300);
        x = xt;
        cost = trial_cost;
        out.accepted_costs.push_back(cost);
        lambda /= opts.lambda_down;
        accepted = true;
        ++iter;
        if (rel_step <= opts.step_tol) {
          out.termination = TerminationReason::StepTol;
          done = true;
        } else if (rel_decrease <= opts.cost_tol) {
          out.termination = TerminationReason::CostTol;
          done = true;
        } else {
          fn(x, r, &J);  // fresh linearization for the next outer iteration
        }
      } else {
        lambda *= opts.lambda_up;
        if (lambda > 1e16) {
          // no damping level yields descent: treat as a vanishing step
          out.termination = TerminationReason::StepTol;
          done = true;
        }
      }
    }
  }
  // Undamped Gauss-Newton polish. Near the optimum the true cost decrease
  // drops below the floating-point resolution of the cost itself, so the
  // damped loop stalls; the identity |r|^2 - |rt|^2 = (r - rt).(r + rt)
  // still resolves descent exactly. Quadratic loss only, and a gain-ratio
  // guard rejects steps that run along near-null directions.
  if (opts.robust_loss == RobustLoss::None &&
      out.termination != TerminationReason::Aborted) {
    for (int polish = 0; polish < 3; ++polish) {
      fn(x, r, &J);
      Eigen::VectorXd g = J.transpose() * r;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(J.transpose() * J);
      if (ldlt.info() != Eigen::Success) break;
      Eigen::VectorXd dx = ldlt.solve(-g);
      if (!dx.allFinite()) break;
      double predicted = -0.5 * g.dot(dx);  // = 1/2 g^T (J^T J)^-1 g >= 0
      if (!(predicted > 0.0)) break;
      Eigen::VectorXd rt;
      try {
        fn(x + dx, rt, nullptr);
      } catch (const std::exception&) {
        break;
      }
      if (!rt.allFinite()) break;
      double decrease = 0.5 * (r - rt).dot(r + rt);
      // below the rounding noise of the cost, descent cannot be measured;
      // accept tiny model-trusted refinement steps, reject anything larger
      // whose measured gain falls short of the prediction
      const double eps = std::numeric_limits<double>::epsilon();
      bool in_noise = predicted <= 64.0 * eps * cost &&
                      dx.norm() <= std::sqrt(eps) * std::max(1.0, x.norm());
      if (!(decrease > 0.25 * predicted) && !in_noise) break;
      x += dx;
      double new_cost = robust_cost(rt, opts);
      if (new_cost < cost) out.accepted_costs.push_back(new_cost);
      cost = std::min(cost, new_cost);
    }
  }

  out.iterations = iter;
  out.final_cost = cost;
  out.x = x;
  return out;
}

namespace {

// Weighted residual stack at x without the Jacobian (cheap trial evaluations).
Eigen::VectorXd stacked_residuals(const RobotModel& model, const ParameterVector& params,
                                  const Dataset& dataset, int* excluded) {
  RobotModel current = unpack(model, params);
  std::vector<Eigen::VectorXd> blocks;
  int rows = 0, skipped = 0;
  for (const auto& m : dataset.measurements) {
    auto blk = eval_block(current, m, 1.0 / sigma_for(dataset, m.kind));
    if (!blk) {
      ++skipped;
      continue;
    }
    rows += static_cast<int>(blk->size());
    blocks.push_back(std::move(*blk));
  }
  if (rows == 0) throw EstimatorError("empty residual system: no valid measurement");
  if (excluded) *excluded = skipped;
  Eigen::VectorXd r(rows);
  int at = 0;
  for (const auto& b : blocks) {
    r.segment(at, b.size()) = b;
    at += static_cast<int>(b.size());
  }
  return r;
}

}  // namespace

CalibrationResult lm_solve(const RobotModel& model, const Dataset& dataset,
                           const ParameterVector& x0, const SolveOptions& opts) {
  int excluded = 0;
  auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    ParameterVector p = x0;
    p.values = x;
    if (J) {
      ResidualSystem sys = build_system(model, p, dataset, opts.jacobian_mode);
      r = std::move(sys.r);
      *J = std::move(sys.J);
      excluded = sys.excluded;
    } else {
      r = stacked_residuals(model, p, dataset, nullptr);
    }
  };

  LMSummary summary = lm_minimize(fn, x0.values, opts);

  CalibrationResult result;
  result.initial_cost = summary.initial_cost;
  result.final_cost = summary.final_cost;
  result.iterations = summary.iterations;
  result.termination = summary.termination;
  result.excluded_measurements = excluded;
  result.params_opt = x0;
  result.params_opt.values = summary.x;

  RobotModel final_model = unpack(model, result.params_opt);
  result.rms_per_kind = residual_rms(final_model, dataset, nullptr);

  // covariance only when the problem is overdetermined and decently conditioned
  ResidualSystem sys = build_system(model, result.params_opt, dataset, opts.jacobian_mode);
  const int m_rows = static_cast<int>(sys.r.size());
  const int n = result.params_opt.size();
  if (m_rows > n && n > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys.J, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    if (s(0) > 0.0 && s(n - 1) / s(0) > 1e-10) {
      double sigma2 = 2.0 * summary.final_cost / (m_rows - n);
      Eigen::VectorXd inv_s2 = s.array().square().inverse();
      result.covariance =
          sigma2 * svd.matrixV() * inv_s2.asDiagonal() * svd.matrixV().transpose();
    }
  }
  return result;
}

std::map<MeasurementKind, double> residual_rms(const RobotModel& model,
                                               const Dataset& dataset, int* excluded) {
  std::map<MeasurementKind, std::pair<double, int>> acc;  // sum sq, component count
  int skipped = 0;
  for (const auto& m : dataset.measurements) {
    Eigen::VectorXd r;
    switch (m.kind) {
      case MeasurementKind::SelfContact:
        r = residual_self_contact(model, m);
        break;
      case MeasurementKind::PlaneContact:
        r = Eigen::VectorXd::Constant(1, residual_plane(model, m));
        break;
      case MeasurementKind::SelfObservation: {
        auto rr = residual_projection(model, m);
        if (!rr) {
          ++skipped;
          continue;
        }
        r = *rr;
        break;
      }
      case MeasurementKind::External:
        r = residual_external(model, m);
        break;
    }
    auto& [ss, cnt] = acc[m.kind];
    ss += r.squaredNorm();
    cnt += static_cast<int>(r.size());
  }
  if (excluded) *excluded = skipped;
  std::map<MeasurementKind, double> rms;
  for (const auto& [kind, p] : acc)
    rms[kind] = p.second > 0 ? std::sqrt(p.first / p.second) : 0.0;
  return rms;
}

std::string result_to_json(const CalibrationResult& result, const RobotModel& before,
                           const ParameterVector& x0) {
  nlohmann::json j;
  j["initial_cost"] = result.initial_cost;
  j["final_cost"] = result.final_cost;
  j["iterations"] = result.iterations;
  j["termination"] = termination_name(result.termination);
  j["excluded_measurements"] = result.excluded_measurements;
  j["rms_per_kind"] = nlohmann::json::object();
  for (const auto& [kind, rms] : result.rms_per_kind) {
    const char* unit = kind == MeasurementKind::SelfObservation ? "px" : "m";
    j["rms_per_kind"][kind_name(kind)] = {{"rms", rms}, {"unit", unit}};
  }
  auto layout = parameter_layout(before);
  nlohmann::json table = nlohmann::json::array();
  for (int i = 0; i < result.params_opt.size(); ++i) {
    const auto& name = result.params_opt.names[i];
    FieldClass fc = FieldClass::Length;
    for (const auto& e : layout)
      if (e.name == name) fc = e.field_class;
    table.push_back({{"name", name},
                     {"unit", fc == FieldClass::Length ? "m" : "rad"},
                     {"before", x0.values(i) * x0.scales(i)},
                     {"after", result.params_opt.values(i) * result.params_opt.scales(i)}});
  }
  j["parameters"] = table;
  return j.dump(2);
}

}  // namespace selfcal
