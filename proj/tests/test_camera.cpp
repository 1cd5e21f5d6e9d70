#include <cmath>
#include <set>

#include "doctest.h"
#include "mvdd/camera.hpp"
#include "mvdd/rng.hpp"
#include "oracles.hpp"

using namespace mvdd;

namespace {

Eigen::Vector3d random_unit(Rng& rng) {
  while (true) {
    Eigen::Vector3d v(rng.gaussian(), rng.gaussian(), rng.gaussian());
    if (v.norm() > 1e-3) return v.normalized();
  }
}

}  // namespace

TEST_CASE("rodrigues: zero angle gives identity") {
  const Eigen::Matrix3d r = rodrigues_rotation(Eigen::Vector3d(0.3, -0.7, 0.2), 0.0);
  CHECK((r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
}

TEST_CASE("rodrigues: z-axis quarter turn matches the stated convention") {
  const Eigen::Matrix3d r = rodrigues_rotation(Eigen::Vector3d(0, 0, 1), M_PI / 2);
  const Eigen::Vector3d v = r * Eigen::Vector3d(1, 0, 0);
  CHECK(v.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v.y() == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(v.z() == doctest::Approx(0.0).epsilon(1e-12));
  // full matrix of the convention
  Eigen::Matrix3d expected;
  expected << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  CHECK((r - expected).norm() < 1e-12);
}

TEST_CASE("rodrigues: opposite angles compose to identity") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d axis = random_unit(rng);
    const double angle = 4.0 * rng.uniform() - 2.0;
    const Eigen::Matrix3d composed =
        rodrigues_rotation(axis, angle) * rodrigues_rotation(axis, -angle);
    CHECK((composed - Eigen::Matrix3d::Identity()).norm() < 1e-9);
  }
}

TEST_CASE("rodrigues: orthonormal with unit determinant on random inputs") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
    if (axis.norm() < 1e-6) continue;
    const double angle = 20.0 * (rng.uniform() - 0.5);
    const Eigen::Matrix3d r = rodrigues_rotation(axis, angle);
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("rodrigues: zero axis is rejected") {
  CHECK_THROWS_AS(rodrigues_rotation(Eigen::Vector3d::Zero(), 1.0), std::invalid_argument);
}

TEST_CASE("fixed rig: vertex A and the elevation/azimuth table") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(16, 16));
  REQUIRE(rig.size() == 8);
  const Eigen::Vector3d a = rig.cameras[0].pose.center();
  CHECK(a.x() == doctest::Approx(1.0606602).epsilon(1e-6));
  CHECK(a.y() == doctest::Approx(1.0606602).epsilon(1e-6));
  CHECK(a.z() == doctest::Approx(0.8660254).epsilon(1e-6));

  // elevation/azimuth by label: A,F,H,D at +30deg az 45/135/225/315; G,C,B,E at -10deg
  const double r = std::sqrt(3.0);
  auto expect = [&](int index, double el_deg, double az_deg) {
    const double el = el_deg * M_PI / 180, az = az_deg * M_PI / 180;
    const Eigen::Vector3d c(r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az),
                            r * std::sin(el));
    CHECK((rig.cameras[index].pose.center() - c).norm() < 1e-6);
  };
  expect(0, 30, 45);    // A
  expect(5, 30, 135);   // F
  expect(7, 30, 225);   // H
  expect(3, 30, 315);   // D
  expect(6, -10, 45);   // G
  expect(2, -10, 135);  // C
  expect(1, -10, 225);  // B
  expect(4, -10, 315);  // E
}

TEST_CASE("fixed rig: all centers on the sphere, squares at each elevation") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(8, 8));
  for (const auto& cam : rig.cameras)
    CHECK(cam.pose.center().norm() == doctest::Approx(std::sqrt(3.0)).epsilon(1e-6));

  // upper set A,F,H,D and lower set G,C,B,E each form a square
  auto square = [&](std::vector<int> ids) {
    std::vector<double> sides;
    for (size_t i = 0; i < ids.size(); ++i) {
      const auto& p = rig.cameras[ids[i]].pose.center();
      const auto& q = rig.cameras[ids[(i + 1) % ids.size()]].pose.center();
      sides.push_back((p - q).norm());
    }
    for (double s : sides) CHECK(s == doctest::Approx(sides[0]).epsilon(1e-6));
  };
  square({0, 5, 7, 3});
  square({6, 2, 1, 4});
}

TEST_CASE("fixed rig: optical axes pass through the origin") {
  for (int views : {4, 8}) {
    const auto rig = fixed_cuboid_rig(Intrinsics::centered(8, 8), views);
    for (const auto& cam : rig.cameras) {
      // origin maps onto the +z axis
      const Eigen::Vector3d o = cam.pose.to_camera(Eigen::Vector3d::Zero());
      CHECK(std::abs(o.x()) < 1e-6);
      CHECK(std::abs(o.y()) < 1e-6);
      CHECK(o.z() > 0);
    }
  }
}

TEST_CASE("dynamic rig: cube metrics for random first centers") {
  Rng rng(7);
  const double edge = 2.0, face = 2.0 * std::sqrt(2.0), space = 2.0 * std::sqrt(3.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Vector3d dir = random_unit(rng);
    if (std::abs(dir.x()) < 1e-3 && std::abs(dir.z()) < 1e-3) continue;
    const auto result = dynamic_cube_rig(dir * std::sqrt(3.0), Intrinsics::centered(8, 8));
    const auto& rig = result.rig;
    REQUIRE(rig.size() == 8);
    std::multiset<int> buckets;
    for (int i = 0; i < 8; ++i) {
      CHECK(rig.cameras[i].pose.center().norm() == doctest::Approx(std::sqrt(3.0)).epsilon(1e-6));
      for (int j = i + 1; j < 8; ++j) {
        const double d =
            (rig.cameras[i].pose.center() - rig.cameras[j].pose.center()).norm();
        if (std::abs(d - edge) < 1e-6) buckets.insert(0);
        else if (std::abs(d - face) < 1e-6) buckets.insert(1);
        else if (std::abs(d - space) < 1e-6) buckets.insert(2);
        else FAIL("unexpected pairwise distance ", d);
      }
    }
    CHECK(buckets.count(0) == 12);  // edges
    CHECK(buckets.count(1) == 12);  // face diagonals
    CHECK(buckets.count(2) == 4);   // space diagonals
  }
}

TEST_CASE("dynamic rig: matches brute-force cube orientation search") {
  const Eigen::Vector3d a(1, 1, 1);
  const auto result = dynamic_cube_rig(a, Intrinsics::centered(8, 8));
  std::vector<Eigen::Vector3d> centers;
  for (const auto& cam : result.rig.cameras) centers.push_back(cam.pose.center());
  CHECK(oracles::cube_fit_residual(a, centers) < 1e-6);
  // and the plane constraint holds for B, C, D
  for (int i : {1, 2, 3}) {
    const auto& c = centers[i];
    CHECK(std::abs(c.x() * a.z() - c.z() * a.x()) < 1e-6);
  }

  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Vector3d dir = random_unit(rng) * std::sqrt(3.0);
    if (std::abs(dir.x()) < 1e-2 && std::abs(dir.z()) < 1e-2) continue;
    const auto r2 = dynamic_cube_rig(dir, Intrinsics::centered(8, 8));
    std::vector<Eigen::Vector3d> c2;
    for (const auto& cam : r2.rig.cameras) c2.push_back(cam.pose.center());
    CHECK(oracles::cube_fit_residual(dir, c2) < 1e-6);
  }
}

TEST_CASE("dynamic rig: off-sphere center rescaled with a warning, poles rejected") {
  const auto result = dynamic_cube_rig(Eigen::Vector3d(2, 2, 2), Intrinsics::centered(8, 8));
  CHECK(result.rescaled_first_center);
  CHECK(result.rig.cameras[0].pose.center().norm() ==
        doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));

  const auto exact = dynamic_cube_rig(Eigen::Vector3d(1, 1, 1), Intrinsics::centered(8, 8));
  CHECK_FALSE(exact.rescaled_first_center);

  CHECK_THROWS_AS(dynamic_cube_rig(Eigen::Vector3d(0, std::sqrt(3.0), 0),
                                   Intrinsics::centered(8, 8)),
                  std::invalid_argument);
}

TEST_CASE("look_at_pose: axis-aligned case and transforms") {
  const Eigen::Vector3d center(0, 0, 2);
  const auto result = look_at_pose(center, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0));
  CHECK_FALSE(result.used_fallback_up);
  // camera forward (+z row) points toward the origin
  const Eigen::Vector3d forward = result.pose.rotation.row(2);
  CHECK((forward - Eigen::Vector3d(0, 0, -1)).norm() < 1e-12);
  // center maps to the camera origin
  CHECK(result.pose.to_camera(center).norm() < 1e-12);
  // target lies on the optical axis at distance ||center - target||
  const Eigen::Vector3d t = result.pose.to_camera(Eigen::Vector3d::Zero());
  CHECK(std::abs(t.x()) < 1e-12);
  CHECK(std::abs(t.y()) < 1e-12);
  CHECK(t.z() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("look_at_pose: degenerate up hint falls back") {
  const auto result =
      look_at_pose(Eigen::Vector3d(0, 0, 2), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1));
  CHECK(result.used_fallback_up);
  const Eigen::Matrix3d r = result.pose.rotation;
  CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
  CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
}

TEST_CASE("flatten_extrinsics: identity, bottom row, distinct rows") {
  CameraRig rig;
  rig.sphere_radius = 1.0;
  Camera cam;
  cam.intrinsics = Intrinsics::centered(8, 8);
  rig.cameras.push_back(cam);  // identity pose
  const Eigen::MatrixXd rows = flatten_extrinsics(rig);
  REQUIRE(rows.rows() == 1);
  const double identity[16] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  for (int i = 0; i < 16; ++i) CHECK(rows(0, i) == doctest::Approx(identity[i]));

  const auto fixed = fixed_cuboid_rig(Intrinsics::centered(8, 8));
  const Eigen::MatrixXd all = flatten_extrinsics(fixed);
  REQUIRE(all.rows() == 8);
  for (int v = 0; v < 8; ++v) {
    CHECK(all(v, 12) == 0.0);
    CHECK(all(v, 13) == 0.0);
    CHECK(all(v, 14) == 0.0);
    CHECK(all(v, 15) == 1.0);
    for (int w = v + 1; w < 8; ++w) CHECK((all.row(v) - all.row(w)).norm() > 1e-6);
  }
}

TEST_CASE("rig JSON round trip") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(12, 10), 8);
  const auto copy = rig_from_json(rig_to_json(rig));
  REQUIRE(copy.size() == rig.size());
  CHECK(copy.sphere_radius == doctest::Approx(rig.sphere_radius));
  for (int v = 0; v < rig.size(); ++v) {
    CHECK((copy.cameras[v].pose.rotation - rig.cameras[v].pose.rotation).norm() < 1e-12);
    CHECK((copy.cameras[v].pose.translation - rig.cameras[v].pose.translation).norm() < 1e-12);
    CHECK(copy.cameras[v].intrinsics.fx == rig.cameras[v].intrinsics.fx);
    CHECK(copy.cameras[v].intrinsics.width == rig.cameras[v].intrinsics.width);
  }
}

TEST_CASE("nearest_neighbors: cube adjacency") {
  const auto rig = dynamic_cube_rig(Eigen::Vector3d(1, 1, 1), Intrinsics::centered(8, 8)).rig;
  const auto nbrs = nearest_neighbors(rig, 0, 3);
  REQUIRE(nbrs.size() == 3);
  // the three edge-adjacent vertices sit at distance 2
  for (int n : nbrs)
    CHECK((rig.cameras[n].pose.center() - rig.cameras[0].pose.center()).norm() ==
          doctest::Approx(2.0).epsilon(1e-9));
}
