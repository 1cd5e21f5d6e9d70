#include <cmath>

#include "doctest.h"
#include "mvdd/attention.hpp"
#include "mvdd/dataset.hpp"
#include "mvdd/nn/tape.hpp"
#include "mvdd/rng.hpp"

using namespace mvdd;

namespace {

// identity fold: first feat_dim columns of the widened vector pass through
std::pair<std::vector<double>, std::vector<double>> identity_fold(int f) {
  std::vector<double> w(static_cast<size_t>(f) * (f + 1), 0.0);
  for (int i = 0; i < f; ++i) w[static_cast<size_t>(i) * (f + 1) + i] = 1.0;
  std::vector<double> b(f, 0.0);
  return {w, b};
}

FeatureMaps random_features(Rng& rng, int views, int channels, int res) {
  FeatureMaps f;
  f.views = views;
  f.channels = channels;
  f.height = res;
  f.width = res;
  f.data.resize(static_cast<size_t>(views) * channels * res * res);
  for (double& v : f.data) v = rng.gaussian();
  return f;
}

CameraRig colocated_rig(int res) {
  CameraRig rig;
  rig.sphere_radius = std::sqrt(3.0);
  Camera cam;
  cam.intrinsics = Intrinsics::centered(res, res);
  cam.pose = look_at_pose(Eigen::Vector3d(0, 0, std::sqrt(3.0)), Eigen::Vector3d::Zero(),
                          Eigen::Vector3d(0, 1, 0))
                 .pose;
  rig.cameras = {cam, cam};
  return rig;
}

}  // namespace

TEST_CASE("build_epipolar_kv: co-located views gather their own features") {
  const int res = 8, channels = 3, k = 5;
  const CameraRig rig = colocated_rig(res);
  DepthMapSet depth = DepthMapSet::background(rig, res, res);
  for (double& v : depth.values) v = 0.0;  // mid-range depth everywhere

  Rng rng(1);
  FeatureMaps features = random_features(rng, 2, channels, res);

  const AttentionBatch batch = build_epipolar_kv(features, depth, k, 1, 0.05, 0.15);
  REQUIRE(batch.queries == 2 * res * res);
  REQUIRE(batch.rows == k);

  int query = 0;
  for (int v = 0; v < 2; ++v) {
    const int other = 1 - v;
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x, ++query) {
        for (int row = 0; row < k; ++row) {
          for (int c = 0; c < channels; ++c) {
            const double gathered =
                batch.k[(static_cast<size_t>(query) * k + row) * channels + c];
            CHECK(std::abs(gathered - features.at(other, c, y, x)) < 1e-6);
          }
        }
      }
    }
  }
}

TEST_CASE("build_epipolar_kv: inconsistent neighbor depths mask everything") {
  const int res = 8;
  const CameraRig rig = colocated_rig(res);
  DepthMapSet depth = DepthMapSet::background(rig, res, res);
  // view 0 mid-range, view 1 offset by a full world unit (far beyond tau)
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      depth.at(0, y, x) = 0.0;
      depth.at(1, y, x) = depth.range.normalize(depth.range.denormalize(0.0) + 1.0);
    }
  Rng rng(2);
  FeatureMaps features = random_features(rng, 2, 2, res);
  const AttentionBatch batch = build_epipolar_kv(features, depth, 3, 1, 0.05, 0.15);
  for (int q = 0; q < res * res; ++q)  // view 0 queries
    for (int row = 0; row < batch.rows; ++row)
      CHECK_FALSE(batch.mask[static_cast<size_t>(q) * batch.rows + row]);
}

TEST_CASE("build_epipolar_kv: k=1 gathers the true correspondence on exact renders") {
  const int res = 64, channels = 2;
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(res, res), 4);
  PrimitiveShape sphere;
  sphere.kind = ShapeKind::kSphere;
  sphere.radius = 0.55;
  const DepthMapSet depth = render_views(sphere, rig);

  // smooth (linear) feature maps make bilinear lookup exact
  FeatureMaps features;
  features.views = 4;
  features.channels = channels;
  features.height = res;
  features.width = res;
  features.data.resize(static_cast<size_t>(4) * channels * res * res);
  for (int v = 0; v < 4; ++v)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        features.at(v, 0, y, x) = 0.013 * x - 0.007 * y + 0.1 * v;
        features.at(v, 1, y, x) = -0.004 * x + 0.019 * y - 0.05 * v;
      }

  const int R = 1;
  const AttentionBatch batch = build_epipolar_kv(features, depth, 1, R, 0.3, 0.15);
  std::vector<std::vector<double>> world(4);
  for (int v = 0; v < 4; ++v) world[v] = depth.world_view(v);

  int checked = 0;
  int query = 0;
  for (int v = 0; v < 4; ++v) {
    const int nbr = nearest_neighbors(rig, v, 1)[0];
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x, ++query) {
        if (depth.at(v, y, x) >= kForegroundLimit) continue;
        if (!batch.mask[query]) continue;
        // analytic correspondence from the exact surface
        const double own = world[v][static_cast<size_t>(y) * res + x];
        const Eigen::Vector3d point =
            rig.cameras[v].pose.to_world(back_project(x, y, own, rig.cameras[v].intrinsics));
        const Eigen::Vector3d in_nbr = rig.cameras[nbr].pose.to_camera(point);
        if (in_nbr.z() <= 0) continue;
        const Projection proj = project(in_nbr, rig.cameras[nbr].intrinsics);
        if (proj.px < 1 || proj.py < 1 || proj.px > res - 2 || proj.py > res - 2) continue;
        const double expected0 = 0.013 * proj.px - 0.007 * proj.py + 0.1 * nbr;
        const double expected1 = -0.004 * proj.px + 0.019 * proj.py - 0.05 * nbr;
        CHECK(std::abs(batch.k[static_cast<size_t>(query) * channels] - expected0) < 1e-3);
        CHECK(std::abs(batch.k[static_cast<size_t>(query) * channels + 1] - expected1) < 1e-3);
        ++checked;
      }
    }
  }
  REQUIRE(checked > 200);
}

TEST_CASE("build_epipolar_kv rejects R > views - 1") {
  const CameraRig rig = colocated_rig(4);
  DepthMapSet depth = DepthMapSet::background(rig, 4, 4);
  Rng rng(3);
  FeatureMaps features = random_features(rng, 2, 2, 4);
  CHECK_THROWS_AS(build_epipolar_kv(features, depth, 3, 2, 0.1, 0.15), std::invalid_argument);
}

TEST_CASE("epipolar_attention kernel: single key, all masked, equal logits") {
  const int f = 3;
  auto [fw, fb] = identity_fold(f);

  AttentionBatch batch;
  batch.queries = 1;
  batch.rows = 2;
  batch.feat_dim = f;
  batch.q = {1.0, 0.5, -0.5};
  batch.k = {0.2, 0.4, 0.6, /* row 1 */ 9.0, -9.0, 9.0};
  batch.v = {0.2, 0.4, 0.6, 0.33, /* row 1 */ 5.0, 5.0, 5.0, 5.0};
  batch.mask = {1, 0};
  const auto out = epipolar_attention(batch, fw, fb);
  CHECK(out[0] == doctest::Approx(0.2));
  CHECK(out[1] == doctest::Approx(0.4));
  CHECK(out[2] == doctest::Approx(0.6));

  batch.mask = {0, 0};
  const auto zeros = epipolar_attention(batch, fw, fb);
  for (double v : zeros) CHECK(v == 0.0);

  // two keys with identical logits average their values
  batch.k = {0.2, 0.4, 0.6, 0.2, 0.4, 0.6};
  batch.v = {1.0, 2.0, 3.0, 0.0, 3.0, 4.0, 5.0, 1.0};
  batch.mask = {1, 1};
  const auto mean = epipolar_attention(batch, fw, fb);
  CHECK(mean[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(mean[1] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(mean[2] == doctest::Approx(4.0).epsilon(1e-6));

  // the widened channel reaches the output through the fold map
  std::vector<double> depth_fold(static_cast<size_t>(f) * (f + 1), 0.0);
  for (int i = 0; i < f; ++i) depth_fold[static_cast<size_t>(i) * (f + 1) + f] = 1.0;
  const auto depth_out = epipolar_attention(batch, depth_fold, fb);
  CHECK(depth_out[0] == doctest::Approx(0.5).epsilon(1e-6));  // mean of appended 0 and 1
}

TEST_CASE("epipolar_attention: weights normalize and ignore masked values") {
  Rng rng(4);
  const int f = 4, rows = 6, queries = 5;
  AttentionBatch batch;
  batch.queries = queries;
  batch.rows = rows;
  batch.feat_dim = f;
  batch.q.resize(static_cast<size_t>(queries) * f);
  batch.k.resize(static_cast<size_t>(queries) * rows * f);
  batch.v.resize(static_cast<size_t>(queries) * rows * (f + 1));
  batch.mask.resize(static_cast<size_t>(queries) * rows);
  for (double& v : batch.q) v = rng.gaussian();
  for (double& v : batch.k) v = rng.gaussian();
  for (double& v : batch.v) v = rng.gaussian();
  for (size_t i = 0; i < batch.mask.size(); ++i) batch.mask[i] = rng.uniform() < 0.5 ? 1 : 0;
  batch.mask[0] = 1;  // ensure query 0 has a key

  auto [fw, fb] = identity_fold(f);
  for (double& v : fw) v = rng.gaussian();
  for (double& v : fb) v = rng.gaussian();

  std::vector<double> weights;
  const auto out = epipolar_attention(batch, fw, fb, &weights);

  for (int q = 0; q < queries; ++q) {
    bool any = false;
    double sum = 0.0;
    for (int r = 0; r < rows; ++r) {
      any |= batch.mask[static_cast<size_t>(q) * rows + r] != 0;
      sum += weights[static_cast<size_t>(q) * rows + r];
    }
    if (any) CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    else CHECK(sum == 0.0);
  }

  // perturbing a masked key's value leaves the output unchanged
  AttentionBatch poked = batch;
  for (int q = 0; q < queries; ++q)
    for (int r = 0; r < rows; ++r)
      if (!poked.mask[static_cast<size_t>(q) * rows + r])
        for (int c = 0; c <= f; ++c)
          poked.v[(static_cast<size_t>(q) * rows + r) * (f + 1) + c] += 1e6;
  const auto poked_out = epipolar_attention(poked, fw, fb);
  for (size_t i = 0; i < out.size(); ++i) {
    const double rel = std::abs(poked_out[i] - out[i]) /
                       std::max(1.0, std::abs(out[i]));
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("epipolar_attention: permutation equivariance of key rows") {
  Rng rng(5);
  const int f = 3, rows = 5;
  AttentionBatch batch;
  batch.queries = 1;
  batch.rows = rows;
  batch.feat_dim = f;
  batch.q = {0.3, -0.2, 0.9};
  batch.k.resize(static_cast<size_t>(rows) * f);
  batch.v.resize(static_cast<size_t>(rows) * (f + 1));
  batch.mask = {1, 0, 1, 1, 0};
  for (double& v : batch.k) v = rng.gaussian();
  for (double& v : batch.v) v = rng.gaussian();
  auto [fw, fb] = identity_fold(f);
  for (double& v : fw) v = rng.gaussian();

  const auto base = epipolar_attention(batch, fw, fb);

  const int perm[rows] = {4, 2, 0, 1, 3};
  AttentionBatch shuffled = batch;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < f; ++c)
      shuffled.k[static_cast<size_t>(r) * f + c] = batch.k[static_cast<size_t>(perm[r]) * f + c];
    for (int c = 0; c <= f; ++c)
      shuffled.v[static_cast<size_t>(r) * (f + 1) + c] =
          batch.v[static_cast<size_t>(perm[r]) * (f + 1) + c];
    shuffled.mask[r] = batch.mask[perm[r]];
  }
  const auto permuted = epipolar_attention(shuffled, fw, fb);
  for (int c = 0; c < f; ++c) CHECK(std::abs(permuted[c] - base[c]) < 1e-9);
}

TEST_CASE("plan mask equals independent brute-force visibility on 4-view 8x8 inputs") {
  const int res = 8, k = 4, R = 2;
  const double delta = 0.25, tau = 0.15;
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(res, res), 4);
  DepthMapSet depth = DepthMapSet::background(rig, res, res);
  Rng rng(6);
  for (double& v : depth.values) v = 0.6 * rng.gaussian();
  depth.clip();

  const EpipolarPlan plan = build_epipolar_plan(depth, k, R, delta, tau);

  // brute force: full projection of every sample point, no shared code
  std::vector<std::vector<double>> world(4);
  for (int v = 0; v < 4; ++v) {
    world[v].resize(res * res);
    for (int i = 0; i < res * res; ++i)
      world[v][i] = depth.range.denormalize(depth.view(v)[i]);
  }
  for (int v = 0; v < 4; ++v) {
    const Camera& cam = rig.cameras[v];
    const Eigen::Matrix3d a_inv = cam.intrinsics.matrix().inverse();
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        const double own = std::max(world[v][y * res + x], kMinRayDepth);
        const double lo = std::max(own - delta, kMinRayDepth);
        const double hi = own + delta;
        for (int r = 0; r < R; ++r) {
          const int nv = plan.neighbor_view[static_cast<size_t>(v) * R + r];
          const Camera& nbr = rig.cameras[nv];
          for (int s = 0; s < k; ++s) {
            const double ds = k == 1 ? own : lo + (hi - lo) * s / (k - 1);
            const Eigen::Vector3d sample = a_inv * Eigen::Vector3d(x, y, 1) * ds;
            const Eigen::Vector3d w = cam.pose.rotation.transpose() *
                                      (sample - cam.pose.translation);
            const Eigen::Vector3d in_nbr = nbr.pose.rotation * w + nbr.pose.translation;
            bool visible = false;
            if (in_nbr.z() > 0) {
              const double px =
                  nbr.intrinsics.fx * in_nbr.x() / in_nbr.z() + nbr.intrinsics.cx;
              const double py =
                  nbr.intrinsics.fy * in_nbr.y() / in_nbr.z() + nbr.intrinsics.cy;
              if (px >= 0 && py >= 0 && px <= res - 1 && py <= res - 1) {
                const int x0 = std::min(static_cast<int>(px), res - 2);
                const int y0 = std::min(static_cast<int>(py), res - 2);
                const double fx = px - x0, fy = py - y0;
                const double stored =
                    (1 - fy) * ((1 - fx) * world[nv][y0 * res + x0] +
                                fx * world[nv][y0 * res + x0 + 1]) +
                    fy * ((1 - fx) * world[nv][(y0 + 1) * res + x0] +
                          fx * world[nv][(y0 + 1) * res + x0 + 1]);
                visible = std::abs(in_nbr.z() - stored) < tau;
              }
            }
            CHECK(static_cast<bool>(plan.visible[plan.entry(v, y, x, r, s)]) == visible);
          }
        }
      }
    }
  }
}

TEST_CASE("tape attention node with one head matches the public kernel") {
  const int res = 8, channels = 4;
  const auto rig = fixed_cuboid_rig(Intrinsics::centered(res, res), 4);
  DepthMapSet depth = DepthMapSet::background(rig, res, res);
  Rng rng(7);
  for (double& v : depth.values) v = 0.5 * rng.gaussian();
  depth.clip();

  FeatureMaps features = random_features(rng, 4, channels, res);
  const auto plan =
      std::make_shared<EpipolarPlan>(build_epipolar_plan(depth, 3, 2, 0.25, 0.15));

  nn::ParamStore store;
  const int fw = store.add("fold.w", {channels, channels + 1});
  const int fb = store.add("fold.b", {channels});
  for (double& v : store.at(fw).value) v = rng.gaussian();
  for (double& v : store.at(fb).value) v = rng.gaussian();

  nn::Tape tape(&store);
  const int x = tape.constant({4, channels, res, res}, features.data);
  const int out = tape.epipolar_attention(x, plan, tape.param(fw), tape.param(fb), 1);

  const AttentionBatch batch = gather_kv(features, *plan);
  const auto kernel_out =
      epipolar_attention(batch, store.at(fw).value, store.at(fb).value);

  // kernel output is per query (v, y, x); tape output is [v, c, y, x]
  const auto& node = tape.value(out);
  int query = 0;
  for (int v = 0; v < 4; ++v)
    for (int y = 0; y < res; ++y)
      for (int xx = 0; xx < res; ++xx, ++query)
        for (int c = 0; c < channels; ++c) {
          const double tape_val =
              node[((static_cast<size_t>(v) * channels + c) * res + y) * res + xx];
          CHECK(std::abs(tape_val - kernel_out[static_cast<size_t>(query) * channels + c]) <
                1e-12);
        }
}
