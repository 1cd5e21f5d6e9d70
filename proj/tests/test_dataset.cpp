#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mvdd/dataset.hpp"
#include "mvdd/geometry.hpp"
#include "mvdd/rng.hpp"

using namespace mvdd;

namespace {

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

// signed distance of a world point to the shape surface
double surface_distance(const PrimitiveShape& s, const Eigen::Vector3d& p) {
  switch (s.kind) {
    case ShapeKind::kSphere:
      return std::abs((p - s.center).norm() - s.radius);
    case ShapeKind::kBox: {
      const Eigen::Vector3d q = (p - s.center).cwiseAbs() - s.half_extents;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return std::abs(outside + inside);
    }
    case ShapeKind::kCylinder: {
      const Eigen::Vector3d q = p - s.center;
      const double dr = std::hypot(q.x(), q.y()) - s.radius;
      const double dz = std::abs(q.z()) - s.half_height;
      if (dr <= 0 && dz <= 0) return std::abs(std::max(dr, dz));
      return std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
    }
    case ShapeKind::kUnionOfTwo: {
      const double d1 = (p - s.center).norm() - s.radius;
      const double d2 = (p - s.center2).norm() - s.radius2;
      return std::abs(std::min(d1, d2));
    }
  }
  return 0.0;
}

}  // namespace

TEST_CASE("sample_shape: deterministic, inside the unit ball, diverse kinds") {
  const PrimitiveShape a = sample_shape(1234);
  const PrimitiveShape b = sample_shape(1234);
  CHECK(a.kind == b.kind);
  CHECK(a.radius == b.radius);
  CHECK((a.center - b.center).norm() == 0.0);

  std::set<ShapeKind> kinds_seen;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const PrimitiveShape s = sample_shape(seed);
    CHECK(s.max_extent() <= 1.0 + 1e-12);
    if (seed < 100) kinds_seen.insert(s.kind);
  }
  CHECK(kinds_seen.size() >= 3);
}

TEST_CASE("sample_shape honors a restricted kind list") {
  const ShapeKind kinds[] = {ShapeKind::kSphere, ShapeKind::kBox};
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const PrimitiveShape s = sample_shape(seed, kinds);
    CHECK((s.kind == ShapeKind::kSphere || s.kind == ShapeKind::kBox));
  }
}

TEST_CASE("render_depth: on-axis sphere depth, empty shape, range bounds") {
  const int res = 33;  // odd so a pixel sits exactly on the principal point
  Intrinsics intr = Intrinsics::centered(res, res);
  Camera cam;
  cam.intrinsics = intr;
  cam.pose = look_at_pose(Eigen::Vector3d(0, 0, std::sqrt(3.0)), Eigen::Vector3d::Zero(),
                          Eigen::Vector3d(0, 1, 0))
                 .pose;

  PrimitiveShape sphere;
  sphere.kind = ShapeKind::kSphere;
  sphere.radius = 0.5;
  const auto depth = render_depth(sphere, cam);
  const double center = depth[static_cast<size_t>(intr.cy) * res + static_cast<int>(intr.cx)];
  CHECK(center == doctest::Approx(std::sqrt(3.0) - 0.5).epsilon(1e-9));

  PrimitiveShape degenerate;
  degenerate.kind = ShapeKind::kSphere;
  degenerate.radius = 0.0;
  const auto empty = render_depth(degenerate, cam);
  const DepthRange range = DepthRange::standard();
  for (double d : empty) CHECK(d == range.far);

  // any convex shape inside the unit ball stays within [near, far]
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto rendered = render_depth(sample_shape(seed), cam);
    for (double d : rendered) {
      CHECK(d >= range.near - 1e-12);
      CHECK(d <= range.far + 1e-12);
    }
  }
}

TEST_CASE("normalize_depth: endpoints, midpoint, round trip") {
  const DepthRange range = DepthRange::standard();
  const std::vector<double> raw = {range.near, 0.5 * (range.near + range.far), range.far};
  const auto norm = normalize_depth(raw, range);
  CHECK(norm[0] == doctest::Approx(-1.0));
  CHECK(norm[1] == doctest::Approx(0.0));
  CHECK(norm[2] == doctest::Approx(1.0));

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double d = range.near + rng.uniform() * (range.far - range.near);
    const auto n = normalize_depth(std::vector<double>{d}, range);
    CHECK(range.denormalize(n[0]) == doctest::Approx(d).epsilon(1e-6));
  }

  CHECK_THROWS_AS(normalize_depth(raw, DepthRange{2.0, 1.0}), std::invalid_argument);
}

TEST_CASE("rendered foreground is in [-1, 1) and background exactly +1") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(24, 24), 4);
  const DepthMapSet maps = render_views(sample_shape(5), rig);
  int fg = 0, bg = 0;
  for (double v : maps.values) {
    if (v == kBackgroundValue) ++bg;
    else {
      ++fg;
      CHECK(v >= -1.0);
      CHECK(v < kForegroundLimit);
    }
  }
  CHECK(fg > 0);
  CHECK(bg > 0);
}

TEST_CASE("build_dataset: payload size, bitwise rebuild, manifest round trip") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(16, 16), 4);
  const std::string path_a = "ds_a.mvdd", path_b = "ds_b.mvdd";
  build_dataset(64, rig, 7, path_a);
  build_dataset(64, rig, 7, path_b);
  const auto bytes_a = file_bytes(path_a), bytes_b = file_bytes(path_b);
  CHECK(bytes_a == bytes_b);

  const Dataset ds = load_dataset(path_a);
  CHECK(ds.manifest.count == 64);
  CHECK(ds.manifest.views == 4);
  CHECK(ds.manifest.height == 16);
  CHECK(ds.manifest.width == 16);
  CHECK(ds.payload.size() == 64u * 4u * 16u * 16u);
  CHECK(ds.rig.size() == 4);
  CHECK((ds.rig.cameras[0].pose.center() - rig.cameras[0].pose.center()).norm() < 1e-12);

  const DepthMapSet sample0 = ds.sample(0);
  CHECK(sample0.views == 4);
  CHECK(sample0.range.near == doctest::Approx(DepthRange::standard().near));
  CHECK_THROWS_AS(ds.sample(64), std::invalid_argument);

  std::filesystem::remove(path_a);
  std::filesystem::remove(path_b);
}

TEST_CASE("dataset samples back-project onto the generating surface") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(32, 32), 4);
  Rng rng(11);
  for (uint64_t seed : {3ull, 17ull, 90ull}) {
    const PrimitiveShape shape = sample_shape(seed);
    const DepthMapSet maps = render_views(shape, rig);
    const auto cloud = fuse_to_pointcloud(maps, VisibilityMask::filled(4, 32, 32, true));
    REQUIRE(cloud.size() > 50);
    for (const auto& p : cloud.points) CHECK(surface_distance(shape, p) < 1e-3);
  }
}

TEST_CASE("rendered views are cross-view consistent on interior mutual pixels") {
  const int res = 64;
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(res, res), 8);
  PrimitiveShape sphere;
  sphere.kind = ShapeKind::kSphere;
  sphere.radius = 0.55;
  const DepthMapSet maps = render_views(sphere, rig);
  std::vector<std::vector<double>> world(8);
  for (int v = 0; v < 8; ++v) world[v] = maps.world_view(v);

  int pass = 0, total = 0;
  FusionThresholds th;  // psi 1 px, eps 1%
  for (int v = 0; v < 8; ++v) {
    const int r = nearest_neighbors(rig, v, 1)[0];
    for (int y = 1; y < res - 1; ++y) {
      for (int x = 1; x < res - 1; ++x) {
        if (maps.at(v, y, x) >= kForegroundLimit) continue;
        const double own = world[v][static_cast<size_t>(y) * res + x];
        const Eigen::Vector3d point =
            rig.cameras[v].pose.to_world(back_project(x, y, own, rig.cameras[v].intrinsics));
        const Eigen::Vector3d normal = point.normalized();
        if (normal.dot((rig.cameras[v].pose.center() - point).normalized()) < 0.45) continue;
        if (normal.dot((rig.cameras[r].pose.center() - point).normalized()) < 0.45) continue;
        ++total;
        if (fusion_visibility(x, y, rig.cameras[v], world[v], rig.cameras[r], world[r], th))
          ++pass;
      }
    }
  }
  REQUIRE(total > 500);
  CHECK(pass == total);
}

TEST_CASE("save_depth_container round trips sampler output") {
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(8, 8), 4);
  DepthMapSet maps = DepthMapSet::background(rig, 8, 8);
  Rng rng(2);
  for (double& v : maps.values) v = std::clamp(rng.gaussian(), -1.0, 1.0);
  const std::string path = "container_rt.mvdd";
  save_depth_container(path, std::span<const DepthMapSet>(&maps, 1));
  const Dataset ds = load_dataset(path);
  CHECK(ds.count() == 1);
  const DepthMapSet loaded = ds.sample(0);
  for (size_t i = 0; i < maps.values.size(); ++i)
    CHECK(std::abs(loaded.values[i] - maps.values[i]) < 1e-6);  // float32 storage
  std::filesystem::remove(path);
}
