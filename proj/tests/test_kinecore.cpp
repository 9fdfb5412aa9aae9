#include <doctest.h>

#include <random>

#include "selfcal/robot_model.hpp"
#include "test_helpers.hpp"

using namespace selfcal;
using namespace selfcal::testing;

TEST_CASE("fk of the root frame is the identity") {
  RobotModel m;
  finish(m);
  Pose p = fk(m, Eigen::VectorXd(), "root");
  CHECK(p.translation.norm() == doctest::Approx(0.0));
  CHECK(p.rotation.angularDistance(Quat::Identity()) == doctest::Approx(0.0));
}

TEST_CASE("one revolute link a=1 at q=pi/2 reaches (0,1,0)") {
  RobotModel m = one_link(1.0);
  Eigen::VectorXd q(1);
  q << M_PI_2;
  Vec3 p = fk(m, q, "link1").translation;
  CHECK(p.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(1.0));
  CHECK(p.z() == doctest::Approx(0.0));
}

TEST_CASE("straight two-link planar arm reaches (2,0,0)") {
  RobotModel m = planar_two_link();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(2);
  Vec3 p = fk(m, q, "link2").translation;
  CHECK(p.isApprox(Vec3(2, 0, 0), 1e-12));
}

TEST_CASE("fk rejects bad inputs") {
  RobotModel m = one_link();
  Eigen::VectorXd q1(1);
  q1 << 0.3;
  CHECK_THROWS_AS(fk(m, q1, "nope"), ModelError);
  CHECK_THROWS_AS(fk(m, Eigen::VectorXd::Zero(3), "link1"), ModelError);
  Eigen::VectorXd qnan(1);
  qnan << std::nan("");
  CHECK_THROWS_AS(fk(m, qnan, "link1"), ModelError);
  m.frames[0].dh().a = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(fk(m, q1, "link1"), ModelError);
}

TEST_CASE("pack with an all-false mask yields an empty vector") {
  RobotModel m = planar_two_link();
  CHECK(pack(m).size() == 0);
}

TEST_CASE("unpack touches exactly the masked scalar") {
  RobotModel m = planar_two_link();
  set_mask(m, "link1.theta");
  ParameterVector pv = pack(m);
  REQUIRE(pv.size() == 1);
  pv.values(0) += 0.1;
  RobotModel m2 = unpack(m, pv);
  CHECK(m2.frames[0].dh().theta_offset == doctest::Approx(0.1));
  CHECK(m2.frames[0].dh().a == m.frames[0].dh().a);
  CHECK(m2.frames[1].dh().theta_offset == m.frames[1].dh().theta_offset);
  CHECK(layout_values(m2).size() == layout_values(m).size());
}

TEST_CASE("full 6-DoF arm mask gives 24 parameters") {
  RobotModel m;
  std::string parent = "root";
  for (int i = 1; i <= 6; ++i) {
    std::string id = "j" + std::to_string(i);
    m.frames.push_back(dh_frame(id, parent, 0.1 * i, 0.05, M_PI_2, 0.0));
    parent = id;
  }
  finish(m);
  set_mask(m, "*");
  CHECK(pack(m).size() == 24);
}

TEST_CASE("pack/unpack round trip is the identity on masked parameters") {
  std::mt19937_64 rng(7);
  RobotModel m = random_tree(rng, 12);
  set_mask(m, "*");
  ParameterVector pv = pack(m);
  RobotModel m2 = unpack(m, pv);
  ParameterVector pv2 = pack(m2);
  REQUIRE(pv2.size() == pv.size());
  CHECK((pv2.values - pv.values).lpNorm<Eigen::Infinity>() < 1e-12);
  // idempotence: a second cycle changes nothing
  ParameterVector pv3 = pack(unpack(m2, pv2));
  CHECK((pv3.values - pv2.values).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("perturb with zero magnitudes is the identity") {
  RobotModel m = planar_two_link();
  set_mask(m, "*");
  RobotModel p = perturb(m, {0.0, 0.0}, 123);
  CHECK((layout_values(p) - layout_values(m)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("perturb is deterministic under a fixed seed") {
  RobotModel m = planar_two_link();
  set_mask(m, "*");
  RobotModel a = perturb(m, {0.005, 0.02}, 42);
  RobotModel b = perturb(m, {0.005, 0.02}, 42);
  CHECK((layout_values(a) - layout_values(b)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("perturbation offsets stay within the magnitudes over many seeds") {
  RobotModel m;
  std::string parent = "root";
  for (int i = 1; i <= 6; ++i) {
    std::string id = "j" + std::to_string(i);
    m.frames.push_back(dh_frame(id, parent, 0.2, 0.1, M_PI_2, 0.3));
    parent = id;
  }
  finish(m);
  set_mask(m, "*");
  auto layout = parameter_layout(m);
  Eigen::VectorXd base = layout_values(m);
  const PerturbMagnitudes mags{0.005, 0.02};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Eigen::VectorXd v = layout_values(perturb(m, mags, seed));
    for (int i = 0; i < v.size(); ++i) {
      double bound =
          layout[i].field_class == FieldClass::Length ? mags.length : mags.angle;
      CHECK(std::abs(v(i) - base(i)) <= bound + 1e-15);
    }
  }
}

TEST_CASE("perturb rejects negative magnitudes") {
  RobotModel m = one_link();
  set_mask(m, "*");
  CHECK_THROWS_AS(perturb(m, {-0.1, 0.0}, 1), ModelError);
}

TEST_CASE("fk composes: child pose = parent pose * local transform") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    RobotModel m = random_tree(rng, 10);
    Eigen::VectorXd q = random_q(m, rng);
    for (const auto& f : m.frames) {
      Pose parent = fk(m, q, f.parent);
      Pose local;
      if (f.is_dh()) {
        const DHLink& l = f.dh();
        double theta = l.theta_offset;
        if (l.joint_kind == JointKind::Revolute) theta += q(m.joint_index(f.id));
        local = dh_transform(l.a, l.d, l.alpha, theta);
      } else {
        local = f.mount().pose;
      }
      Pose expected = parent.compose(local);
      Pose actual = fk(m, q, f.id);
      CHECK((actual.translation - expected.translation).norm() < 1e-12);
      CHECK(actual.rotation.angularDistance(expected.rotation) < 1e-12);
    }
  }
}

TEST_CASE("a pose composed with its inverse is the identity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Pose p{quat_from_rotvec(Vec3(u(rng), u(rng), u(rng)) * 2.0),
           Vec3(u(rng), u(rng), u(rng))};
    Pose id = p.compose(p.inverse());
    CHECK(id.translation.norm() < 1e-12);
    CHECK(id.rotation.angularDistance(Quat::Identity()) < 1e-12);
  }
}

TEST_CASE("fk is invariant to adding 2*pi to a revolute joint") {
  std::mt19937_64 rng(17);
  RobotModel m = random_tree(rng, 8);
  if (m.joint_count() == 0) return;
  Eigen::VectorXd q = random_q(m, rng);
  std::string leaf = m.frames.back().id;
  Vec3 p0 = fk(m, q, leaf).translation;
  for (int j = 0; j < q.size(); ++j) {
    Eigen::VectorXd q2 = q;
    q2(j) += 2.0 * M_PI;
    CHECK((fk(m, q2, leaf).translation - p0).norm() < 1e-12);
  }
}

TEST_CASE("validate_model reports structural problems") {
  RobotModel m = planar_two_link();
  m.named_chains["bad"] = {"link2", "link1"};  // not a root-to-frame path
  CHECK_THROWS_AS(validate_model(m), ModelError);

  RobotModel cyc;
  cyc.frames.push_back(dh_frame("a", "b", 0, 0, 0, 0));
  cyc.frames.push_back(dh_frame("b", "a", 0, 0, 0, 0));
  finish(cyc);
  CHECK_THROWS_AS(validate_model(cyc), ModelError);

  RobotModel bad_mask = planar_two_link();
  bad_mask.calibration_mask.pop_back();
  CHECK_THROWS_AS(validate_model(bad_mask), ModelError);
}

TEST_CASE("angles are stored normalized to (-pi, pi]") {
  RobotModel m = one_link();
  set_mask(m, "link1.theta");
  ParameterVector pv = pack(m);
  pv.values(0) = 3.0 * M_PI;  // unwrapped input
  RobotModel m2 = unpack(m, pv);
  CHECK(m2.frames[0].dh().theta_offset == doctest::Approx(M_PI));
  CHECK(m2.frames[0].dh().theta_offset <= M_PI);
  CHECK(m2.frames[0].dh().theta_offset > -M_PI);
}
