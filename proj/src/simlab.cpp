#include "selfcal/simlab.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "selfcal/robot_io.hpp"

namespace selfcal {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// per-measurement stream: independent of generation order
std::uint64_t record_seed(std::uint64_t base, MeasurementKind kind, int index,
                          int attempt = 0) {
  return splitmix64(base ^ splitmix64((std::uint64_t(kind) << 40) ^
                                      (std::uint64_t(attempt) << 24) ^
                                      std::uint64_t(index)));
}

struct JointLimits {
  Eigen::VectorXd lo, hi;
};

JointLimits joint_limits(const RobotModel& model) {
  JointLimits lim;
  lim.lo.resize(model.joint_count());
  lim.hi.resize(model.joint_count());
  int k = 0;
  for (const auto& f : model.frames)
    if (f.is_dh() && f.dh().joint_kind == JointKind::Revolute) {
      lim.lo(k) = f.dh().limit_lo;
      lim.hi(k) = f.dh().limit_hi;
      ++k;
    }
  return lim;
}

Eigen::VectorXd random_q(const JointLimits& lim, std::mt19937_64& rng) {
  Eigen::VectorXd q(lim.lo.size());
  for (int i = 0; i < q.size(); ++i) {
    std::uniform_real_distribution<double> u(lim.lo(i), lim.hi(i));
    q(i) = u(rng);
  }
  return q;
}

}  // namespace

std::vector<Eigen::VectorXd> sample_configurations(const RobotModel& model, int n,
                                                   std::uint64_t seed) {
  if (n < 0) throw ScenarioError("sample count must be non-negative");
  JointLimits lim = joint_limits(model);
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(splitmix64(seed ^ std::uint64_t(i)));
    out.push_back(random_q(lim, rng));
  }
  return out;
}

namespace {

// Damped Gauss-Newton over q for a small residual, joints clamped to limits.
template <typename ResidualFn>
ContactSolveResult gauss_newton_contact(const RobotModel& model, ResidualFn residual,
                                        double eps, std::uint64_t seed, int restarts) {
  if (!(eps > 0.0)) throw ScenarioError("contact tolerance must be positive");
  JointLimits lim = joint_limits(model);
  const int nq = static_cast<int>(lim.lo.size());

  ContactSolveResult best;
  best.distance = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(splitmix64(seed));

  for (int attempt = 0; attempt < std::max(1, restarts); ++attempt) {
    Eigen::VectorXd q = random_q(lim, rng);
    double lambda = 1e-4;
    Eigen::VectorXd r = residual(q);
    double err = r.norm();
    for (int it = 0; it < 80 && err > eps; ++it) {
      const int nr = static_cast<int>(r.size());
      Eigen::MatrixXd J(nr, nq);
      const double h = 1e-6;
      for (int j = 0; j < nq; ++j) {
        Eigen::VectorXd qp = q;
        qp(j) += h;
        J.col(j) = (residual(qp) - r) / h;
      }
      Eigen::MatrixXd A = J.transpose() * J;
      A.diagonal().array() += lambda;
      Eigen::VectorXd dq = A.ldlt().solve(-J.transpose() * r);
      Eigen::VectorXd qn = (q + dq).cwiseMax(lim.lo).cwiseMin(lim.hi);
      Eigen::VectorXd rn = residual(qn);
      if (rn.norm() < err) {
        q = qn;
        r = rn;
        err = rn.norm();
        lambda = std::max(lambda / 3.0, 1e-9);
      } else {
        lambda *= 10.0;
        if (lambda > 1e8) break;
      }
    }
    if (err < best.distance) {
      best.distance = err;
      best.q = q;
    }
    if (best.distance <= eps) {
      best.success = true;
      return best;
    }
  }
  return best;  // explicit no-contact-found result
}

}  // namespace

ContactSolveResult solve_contact_configuration(const RobotModel& model,
                                               const std::string& point_a,
                                               const std::string& point_b, double eps,
                                               std::uint64_t seed, const Vec3& target_gap,
                                               int restarts) {
  auto residual = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd {
    return point_world(model, q, point_a) - point_world(model, q, point_b) - target_gap;
  };
  return gauss_newton_contact(model, residual, eps, seed, restarts);
}

ContactSolveResult solve_plane_contact_configuration(
    const RobotModel& model, const std::string& point, const std::string& plane_id,
    double eps, std::uint64_t seed, double target_distance, int restarts) {
  const PlaneParam& plane = model.plane(plane_id);
  Vec3 n = plane_normal(plane);
  auto residual = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd {
    return Eigen::VectorXd::Constant(
        1, n.dot(point_world(model, q, point)) - plane.offset - target_distance);
  };
  return gauss_newton_contact(model, residual, eps, seed, restarts);
}

RobotModel desk_rig() {
  RobotModel m;
  auto mount = [](std::string id, std::string parent, Vec3 t,
                  Quat r = Quat::Identity(), bool calib = false) {
    Frame f;
    f.id = std::move(id);
    f.parent = std::move(parent);
    f.local = MountTransform{{r.normalized(), t}, calib};
    return f;
  };
  auto dh = [](std::string id, std::string parent, double a, double d, double alpha,
               double theta0) {
    Frame f;
    f.id = std::move(id);
    f.parent = std::move(parent);
    DHLink l;
    l.a = a;
    l.d = d;
    l.alpha = alpha;
    l.theta_offset = theta0;
    l.limit_lo = -2.6;
    l.limit_hi = 2.6;
    f.local = l;
    return f;
  };

  m.frames.push_back(mount("torso", "root", {0, 0, 0}));
  m.frames.push_back(mount("head", "torso", {0.05, 0, 0.5}, Quat::Identity(), true));
  m.frames.push_back(mount("l_base", "torso", {0.0, 0.15, 0.35}, Quat::Identity(), true));
  m.frames.push_back(mount("r_base", "torso", {0.0, -0.15, 0.35}, Quat::Identity(), true));

  auto add_arm = [&](const std::string& prefix, const std::string& base) {
    m.frames.push_back(dh(prefix + "1", base, 0.03, 0.12, M_PI_2, 0.0));
    m.frames.push_back(dh(prefix + "2", prefix + "1", 0.25, 0.0, 0.0, 0.0));
    m.frames.push_back(dh(prefix + "3", prefix + "2", 0.04, 0.0, M_PI_2, 0.0));
    m.frames.push_back(dh(prefix + "4", prefix + "3", 0.0, 0.22, -M_PI_2, 0.0));
    m.frames.push_back(dh(prefix + "5", prefix + "4", 0.0, 0.0, M_PI_2, 0.0));
    m.frames.push_back(dh(prefix + "6", prefix + "5", 0.02, 0.07, 0.0, 0.0));
  };
  add_arm("l", "l_base");
  add_arm("r", "r_base");

  m.named_chains["left_arm"] = {"torso", "l_base", "l1", "l2", "l3", "l4", "l5", "l6"};
  m.named_chains["right_arm"] = {"torso", "r_base", "r1", "r2", "r3", "r4", "r5", "r6"};
  m.named_chains["head"] = {"torso", "head"};

  CameraModel cam;
  cam.id = "head_cam";
  cam.parent = "head";
  cam.mount.pose = {Quat(Eigen::AngleAxisd(2.6, Vec3::UnitY())), {0.08, 0.0, 0.05}};
  cam.mount.calibratable = true;
  cam.fx = cam.fy = 500.0;
  cam.cx = 320.0;
  cam.cy = 240.0;
  cam.width = 640;
  cam.height = 480;
  m.cameras.push_back(cam);

  m.markers.push_back({"tip_l", "l6", {0.01, 0.015, 0.04}, {}, false});
  m.markers.push_back({"tip_r", "r6", {0.01, 0.015, 0.04}, {}, false});
  m.markers.push_back({"marker_l", "l4", {0.02, 0.02, 0.10}, {}, false});
  m.markers.push_back({"marker_r", "r4", {0.02, 0.02, 0.10}, {}, false});

  auto add_patch = [&](const std::string& id, const std::string& parent) {
    TaxelPatch p;
    p.id = id;
    p.parent = parent;
    p.mount.pose = {Quat::Identity(), {0.03, 0.0, 0.05}};
    p.mount.calibratable = true;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        p.taxels.push_back(
            {i * 4 + j, {0.01 * i - 0.015, 0.01 * j - 0.015, 0.01}});
    m.taxel_patches.push_back(p);
  };
  add_patch("skin_l", "l4");
  add_patch("skin_r", "r4");

  m.planes.push_back({"table", 0.0, M_PI_2, 0.10, true});

  ExternalDevice dev;
  dev.id = "tracker";
  dev.pose = {Quat(Eigen::AngleAxisd(0.3, Vec3::UnitZ())), {1.2, 0.4, 0.2}};
  dev.noise_sigma = 0.001;
  dev.calibratable = true;
  m.external_devices.push_back(dev);

  m.calibration_mask.assign(parameter_layout(m).size(), 0);
  validate_model(m);
  return m;
}

ScenarioSpec scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
  }
  ScenarioSpec s;
  s.robot = j.value("robot", std::string("desk_rig"));
  for (const auto& p : j.value("mask", json::array()))
    s.mask.push_back(p.get<std::string>());
  if (j.contains("perturbation")) {
    s.perturbation.length = j["perturbation"].value("length", 0.0);
    s.perturbation.angle = j["perturbation"].value("angle", 0.0);
  }
  const json counts = j.value("counts", json::object());
  for (const auto& [name, v] : counts.items()) {
    auto kind = kind_from_name(name);
    if (!kind) throw ScenarioError("counts: unknown measurement kind '" + name + "'");
    int c = v.get<int>();
    if (c < 0) throw ScenarioError("counts." + name + ": must be >= 0");
    s.counts[*kind] = c;
  }
  const json sigmas = j.value("sigmas", json::object());
  for (const auto& [name, v] : sigmas.items()) {
    auto kind = kind_from_name(name);
    if (!kind) throw ScenarioError("sigmas: unknown measurement kind '" + name + "'");
    double sig = v.get<double>();
    if (sig < 0.0) throw ScenarioError("sigmas." + name + ": must be >= 0");
    s.sigmas[*kind] = sig;
  }
  s.contact_tolerance = j.value("contact_tolerance", 1e-6);
  if (!(s.contact_tolerance > 0.0))
    throw ScenarioError("contact_tolerance: must be > 0");
  s.seed = j.value("seed", std::uint64_t(0));
  if (j.contains("outliers")) {
    s.outlier_rate = j["outliers"].value("rate", 0.0);
    s.outlier_magnitude = j["outliers"].value("magnitude", 0.0);
  }
  if (j.contains("self_contact")) {
    s.self_contact.point_a = j["self_contact"].value("point_a", std::string());
    for (const auto& t : j["self_contact"].value("targets", json::array()))
      s.self_contact.targets.push_back(t.get<std::string>());
  }
  if (j.contains("plane_contact")) {
    s.plane_contact.point = j["plane_contact"].value("point", std::string());
    for (const auto& t : j["plane_contact"].value("planes", json::array()))
      s.plane_contact.planes.push_back(t.get<std::string>());
  }
  if (j.contains("self_observation")) {
    for (const auto& t : j["self_observation"].value("cameras", json::array()))
      s.self_observation.cameras.push_back(t.get<std::string>());
    for (const auto& t : j["self_observation"].value("markers", json::array()))
      s.self_observation.markers.push_back(t.get<std::string>());
  }
  if (j.contains("external")) {
    s.external.point = j["external"].value("point", std::string());
    for (const auto& t : j["external"].value("devices", json::array()))
      s.external.devices.push_back(t.get<std::string>());
  }
  return s;
}

std::string scenario_to_json(const ScenarioSpec& s) {
  json j;
  j["robot"] = s.robot;
  j["mask"] = s.mask;
  j["perturbation"] = {{"length", s.perturbation.length}, {"angle", s.perturbation.angle}};
  j["counts"] = json::object();
  for (const auto& [k, c] : s.counts) j["counts"][kind_name(k)] = c;
  j["sigmas"] = json::object();
  for (const auto& [k, sg] : s.sigmas) j["sigmas"][kind_name(k)] = sg;
  j["contact_tolerance"] = s.contact_tolerance;
  j["seed"] = s.seed;
  j["outliers"] = {{"rate", s.outlier_rate}, {"magnitude", s.outlier_magnitude}};
  j["self_contact"] = {{"point_a", s.self_contact.point_a},
                       {"targets", s.self_contact.targets}};
  j["plane_contact"] = {{"point", s.plane_contact.point},
                        {"planes", s.plane_contact.planes}};
  j["self_observation"] = {{"cameras", s.self_observation.cameras},
                           {"markers", s.self_observation.markers}};
  j["external"] = {{"point", s.external.point}, {"devices", s.external.devices}};
  return j.dump(2);
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(buf.str());
}

std::string scenario_hash(const ScenarioSpec& spec) {
  std::string canonical = scenario_to_json(spec);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream oss;
  oss << std::hex << h;
  return oss.str();
}

RobotModel load_scenario_robot(const ScenarioSpec& spec,
                               const std::filesystem::path& base_dir) {
  RobotModel model = spec.robot == "desk_rig"
                         ? desk_rig()
                         : load_robot(base_dir / spec.robot);
  for (const auto& pattern : spec.mask) set_mask(model, pattern);
  validate_model(model);
  return model;
}

namespace {

double dataset_sigma(const ScenarioSpec& spec, MeasurementKind kind) {
  double s = spec.sigmas.count(kind) ? spec.sigmas.at(kind) : 0.0;
  if (s > 0.0) return s;
  // noiseless synthesis still needs a positive weight
  return kind == MeasurementKind::SelfObservation ? 1.0 : 1e-3;
}

}  // namespace

SynthesisResult synthesize(const ScenarioSpec& spec, const RobotModel& nominal) {
  SynthesisResult out;
  out.nominal = nominal;
  out.ground_truth = perturb(nominal, spec.perturbation, spec.seed);
  out.dataset.provenance.note = "scenario " + scenario_hash(spec);
  out.dataset.provenance.seed = spec.seed;

  const RobotModel& truth = out.ground_truth;
  JointLimits lim = joint_limits(truth);

  for (const auto& [kind, count] : spec.counts) {
    if (count == 0) continue;
    out.dataset.sigmas[kind] = dataset_sigma(spec, kind);
    double sigma = spec.sigmas.count(kind) ? spec.sigmas.at(kind) : 0.0;
    int generated = 0;

    for (int i = 0; i < count; ++i) {
      bool ok = false;
      for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
        std::mt19937_64 rng(record_seed(spec.seed, kind, i, attempt));
        std::normal_distribution<double> gauss(0.0, sigma > 0.0 ? sigma : 1.0);
        auto noise = [&]() { return sigma > 0.0 ? gauss(rng) : 0.0; };
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        switch (kind) {
          case MeasurementKind::SelfContact: {
            if (spec.self_contact.point_a.empty() || spec.self_contact.targets.empty())
              throw ScenarioError("self_contact targets not configured");
            std::uniform_int_distribution<size_t> pick(0, spec.self_contact.targets.size() - 1);
            std::string target = spec.self_contact.targets[pick(rng)];
            // a patch target means a randomly chosen taxel on it
            for (const auto& p : truth.taxel_patches)
              if (p.id == target) {
                std::uniform_int_distribution<size_t> tx(0, p.taxels.size() - 1);
                target += ":" + std::to_string(p.taxels[tx(rng)].id);
                break;
              }
            Vec3 gap(noise(), noise(), noise());
            auto sol = solve_contact_configuration(truth, spec.self_contact.point_a,
                                                   target, spec.contact_tolerance,
                                                   rng(), gap);
            if (!sol.success) break;
            Measurement meas;
            meas.kind = kind;
            meas.q = sol.q;
            meas.payload = SelfContactPayload{spec.self_contact.point_a, target, 0.0};
            out.dataset.measurements.push_back(meas);
            ok = true;
            break;
          }
          case MeasurementKind::PlaneContact: {
            if (spec.plane_contact.point.empty() || spec.plane_contact.planes.empty())
              throw ScenarioError("plane_contact targets not configured");
            std::uniform_int_distribution<size_t> pick(0, spec.plane_contact.planes.size() - 1);
            std::string plane = spec.plane_contact.planes[pick(rng)];
            double delta = noise();
            auto sol = solve_plane_contact_configuration(
                truth, spec.plane_contact.point, plane, spec.contact_tolerance, rng(),
                delta);
            if (!sol.success) break;
            Measurement meas;
            meas.kind = kind;
            meas.q = sol.q;
            meas.payload = PlaneContactPayload{spec.plane_contact.point, plane};
            out.dataset.measurements.push_back(meas);
            ok = true;
            break;
          }
          case MeasurementKind::SelfObservation: {
            if (spec.self_observation.cameras.empty() || spec.self_observation.markers.empty())
              throw ScenarioError("self_observation targets not configured");
            std::uniform_int_distribution<size_t> pc(0, spec.self_observation.cameras.size() - 1);
            std::uniform_int_distribution<size_t> pm(0, spec.self_observation.markers.size() - 1);
            const CameraModel& cam = truth.camera(spec.self_observation.cameras[pc(rng)]);
            const std::string marker_id = spec.self_observation.markers[pm(rng)];
            // visibility is guaranteed at truth, not at the perturbed start
            for (int trial = 0; trial < 300 && !ok; ++trial) {
              Eigen::VectorXd q = random_q(lim, rng);
              Vec3 in_cam = camera_pose(truth, q, cam)
                                .inverse()
                                .apply(marker_world(truth, q, truth.marker(marker_id)));
              auto px = project(cam, in_cam);
              if (!px) continue;
              Eigen::Vector2d observed = *px + Eigen::Vector2d(noise(), noise());
              if (unit(rng) < spec.outlier_rate) {
                std::uniform_real_distribution<double> gross(-spec.outlier_magnitude,
                                                             spec.outlier_magnitude);
                observed += Eigen::Vector2d(gross(rng), gross(rng));
              }
              if (px->x() < 0 || px->x() > cam.width || px->y() < 0 || px->y() > cam.height)
                continue;
              observed.x() = std::clamp(observed.x(), 0.0, double(cam.width));
              observed.y() = std::clamp(observed.y(), 0.0, double(cam.height));
              Measurement meas;
              meas.kind = kind;
              meas.q = q;
              meas.payload = SelfObservationPayload{cam.id, marker_id, observed};
              out.dataset.measurements.push_back(meas);
              ok = true;
            }
            break;
          }
          case MeasurementKind::External: {
            if (spec.external.point.empty() || spec.external.devices.empty())
              throw ScenarioError("external targets not configured");
            std::uniform_int_distribution<size_t> pick(0, spec.external.devices.size() - 1);
            const ExternalDevice& dev = truth.device(spec.external.devices[pick(rng)]);
            Eigen::VectorXd q = random_q(lim, rng);
            Vec3 measured = dev.pose.inverse().apply(point_world(truth, q, spec.external.point)) +
                            Vec3(noise(), noise(), noise());
            if (unit(rng) < spec.outlier_rate) {
              std::uniform_real_distribution<double> gross(-spec.outlier_magnitude,
                                                           spec.outlier_magnitude);
              measured += Vec3(gross(rng), gross(rng), gross(rng));
            }
            Measurement meas;
            meas.kind = kind;
            meas.q = q;
            meas.payload = ExternalPayload{spec.external.point, dev.id, measured};
            out.dataset.measurements.push_back(meas);
            ok = true;
            break;
          }
        }
      }
      if (ok) ++generated;
    }
    if (generated < count) out.shortfall[kind] = count - generated;
  }
  return out;
}

SynthesisResult synthesize(const ScenarioSpec& spec,
                           const std::filesystem::path& base_dir) {
  return synthesize(spec, load_scenario_robot(spec, base_dir));
}

Dataset subsample(const Dataset& dataset, const std::map<MeasurementKind, int>& counts) {
  Dataset out;
  out.provenance = dataset.provenance;
  std::map<MeasurementKind, int> taken;
  for (const auto& m : dataset.measurements) {
    auto it = counts.find(m.kind);
    if (it == counts.end() || taken[m.kind] >= it->second) continue;
    out.measurements.push_back(m);
    ++taken[m.kind];
  }
  for (const auto& [kind, count] : counts)
    if (auto it = dataset.sigmas.find(kind); it != dataset.sigmas.end())
      out.sigmas[kind] = it->second;
  return out;
}

}  // namespace selfcal
