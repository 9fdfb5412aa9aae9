#include <doctest.h>

#include <random>

#include "selfcal/robot_model.hpp"
#include "test_helpers.hpp"

using namespace selfcal;
using namespace selfcal::testing;

TEST_CASE("pinhole projection") {
  CameraModel cam;
  cam.fx = cam.fy = 500;
  cam.cx = 320;
  cam.cy = 240;
  cam.width = 640;
  cam.height = 480;

  SUBCASE("optical axis hits the principal point") {
    auto px = project(cam, {0, 0, 1});
    REQUIRE(px);
    CHECK(px->x() == doctest::Approx(320));
    CHECK(px->y() == doctest::Approx(240));
  }
  SUBCASE("lateral offset scales by fx/z") {
    auto px = project(cam, {0.1, 0, 1});
    REQUIRE(px);
    CHECK(px->x() == doctest::Approx(370));
    CHECK(px->y() == doctest::Approx(240));
  }
  SUBCASE("points behind the camera are rejected") {
    CHECK_FALSE(project(cam, {0, 0, -1}));
    CHECK_FALSE(project(cam, {0.2, 0.1, 0.0}));
  }
  SUBCASE("back-projected ray matches the input direction") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.5, 0.5), uz(0.2, 3.0);
    for (int i = 0; i < 200; ++i) {
      Vec3 p(u(rng), u(rng), uz(rng));
      auto px = project(cam, p);
      REQUIRE(px);
      double rx = (px->x() - cam.cx) / cam.fx;
      double ry = (px->y() - cam.cy) / cam.fy;
      CHECK(std::abs(rx - p.x() / p.z()) < 1e-10);
      CHECK(std::abs(ry - p.y() / p.z()) < 1e-10);
    }
  }
}

TEST_CASE("plane normal from spherical parameters") {
  CHECK(plane_normal({"p", 0.0, M_PI_2, 0.0, false}).isApprox(Vec3(0, 0, 1), 1e-12));
  CHECK(plane_normal({"p", 0.0, 0.0, 0.0, false}).isApprox(Vec3(1, 0, 0), 1e-12));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int i = 0; i < 500; ++i) {
    PlaneParam p{"p", u(rng), u(rng), u(rng), false};
    CHECK(std::abs(plane_normal(p).norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("plane signed distance recovers the offset for on-plane points") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    PlaneParam p{"p", u(rng), u(rng), u(rng), false};
    Vec3 n = plane_normal(p);
    // any tangent direction
    Vec3 t = n.cross(std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX()).normalized();
    Vec3 point = n * p.offset + t * u(rng);
    CHECK(std::abs(n.dot(point) - p.offset) < 1e-12);
  }
}

namespace {

RobotModel patch_on_chain(int links, const Pose& mount) {
  RobotModel m;
  std::string parent = "root";
  for (int i = 0; i < links; ++i) {
    std::string id = "j" + std::to_string(i);
    m.frames.push_back(dh_frame(id, parent, 0.2, 0.05, i % 2 ? M_PI_2 : 0.0, 0.1));
    parent = id;
  }
  TaxelPatch p;
  p.id = "skin";
  p.parent = parent;
  p.mount = {mount, true};
  p.taxels.push_back({0, {0.01, 0.0, 0.0}});
  p.taxels.push_back({7, {0.0, 0.02, 0.01}});
  m.taxel_patches.push_back(p);
  finish(m);
  return m;
}

}  // namespace

TEST_CASE("taxel_world on a zero-length chain with identity mount") {
  RobotModel m = patch_on_chain(0, Pose::identity());
  m.taxel_patches[0].parent = "root";
  Vec3 p = taxel_world(m, Eigen::VectorXd(), "skin", 0);
  CHECK(p.isApprox(Vec3(0.01, 0, 0), 1e-12));
}

TEST_CASE("translating the mount shifts every taxel by the same vector") {
  RobotModel base = patch_on_chain(3, Pose::identity());
  RobotModel moved = patch_on_chain(3, Pose{Quat::Identity(), {0, 0, 0.1}});
  std::mt19937_64 rng(21);
  Eigen::VectorXd q = random_q(base, rng);
  Vec3 d7 = taxel_world(moved, q, "skin", 7) - taxel_world(base, q, "skin", 7);
  Vec3 d0 = taxel_world(moved, q, "skin", 0) - taxel_world(base, q, "skin", 0);
  // the offset lives in the parent link frame, so rotate it into the world
  Vec3 expected = fk(base, q, "j2").rotation * Vec3(0, 0, 0.1);
  CHECK(d7.isApprox(expected, 1e-12));
  CHECK(d0.isApprox(d7, 1e-12));  // every taxel shifts by the same vector
}

TEST_CASE("taxel_world equals an independent homogeneous-matrix composition") {
  // oracle: multiply 4x4 matrices built directly from the DH scalars
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Pose mount{quat_from_rotvec(Vec3(u(rng), u(rng), u(rng))), Vec3(u(rng), u(rng), u(rng))};
    RobotModel m = patch_on_chain(4, mount);
    Eigen::VectorXd q = random_q(m, rng);

    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    int ji = 0;
    for (const auto& f : m.frames) {
      const DHLink& l = f.dh();
      double th = l.theta_offset + q(ji++);
      Eigen::Matrix4d A = Eigen::Matrix4d::Identity();
      A(0, 0) = std::cos(th);
      A(0, 1) = -std::sin(th) * std::cos(l.alpha);
      A(0, 2) = std::sin(th) * std::sin(l.alpha);
      A(0, 3) = l.a * std::cos(th);
      A(1, 0) = std::sin(th);
      A(1, 1) = std::cos(th) * std::cos(l.alpha);
      A(1, 2) = -std::cos(th) * std::sin(l.alpha);
      A(1, 3) = l.a * std::sin(th);
      A(2, 1) = std::sin(l.alpha);
      A(2, 2) = std::cos(l.alpha);
      A(2, 3) = l.d;
      T *= A;
    }
    Eigen::Matrix4d M = Eigen::Matrix4d::Identity();
    M.topLeftCorner<3, 3>() = mount.rotation.toRotationMatrix();
    M.topRightCorner<3, 1>() = mount.translation;
    T *= M;
    Eigen::Vector4d taxel(0.0, 0.02, 0.01, 1.0);
    Vec3 expected = (T * taxel).head<3>();
    CHECK((taxel_world(m, q, "skin", 7) - expected).norm() < 1e-12);
  }
}

TEST_CASE("taxel_world is equivariant under a rigid transform of the robot base") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Pose base_pose{quat_from_rotvec(Vec3(u(rng), u(rng), u(rng))), Vec3(u(rng), u(rng), u(rng))};

  RobotModel m = patch_on_chain(3, Pose{Quat::Identity(), {0.02, 0, 0.03}});
  RobotModel moved = m;
  // re-root the whole robot behind one extra mount
  Frame base = mount_frame("base", "root", base_pose.translation, base_pose.rotation);
  for (auto& f : moved.frames)
    if (f.parent == "root") f.parent = "base";
  moved.frames.insert(moved.frames.begin(), base);
  finish(moved);

  Eigen::VectorXd q = random_q(m, rng);
  Vec3 p = taxel_world(m, q, "skin", 0);
  Vec3 p_moved = taxel_world(moved, q, "skin", 0);
  CHECK((p_moved - base_pose.apply(p)).norm() < 1e-12);
}

TEST_CASE("taxel_world rejects unknown ids") {
  RobotModel m = patch_on_chain(2, Pose::identity());
  std::mt19937_64 rng(1);
  Eigen::VectorXd q = random_q(m, rng);
  CHECK_THROWS_AS(taxel_world(m, q, "skin", 99), ModelError);
  CHECK_THROWS_AS(taxel_world(m, q, "nope", 0), ModelError);
}
