// Brute-force reference implementations for tests. These deliberately avoid
// the library's code paths: projections, matchings, and visibility are
// recomputed from first principles.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "mvdd/camera.hpp"
#include "mvdd/geometry.hpp"

namespace oracles {

inline double chamfer(const mvdd::PointCloud& a, const mvdd::PointCloud& b) {
  double total = 0.0;
  for (const auto& p : a.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b.points) best = std::min(best, (p - q).squaredNorm());
    total += best;
  }
  for (const auto& q : b.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a.points) best = std::min(best, (q - p).squaredNorm());
    total += best;
  }
  return total;
}

// factorial enumeration; n <= 8
inline double emd(const mvdd::PointCloud& a, const mvdd::PointCloud& b) {
  const int n = a.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) cost += (a.points[i] - b.points[perm[i]]).norm();
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

template <typename DistanceFn>
double coverage(const std::vector<mvdd::PointCloud>& gen, const std::vector<mvdd::PointCloud>& ref,
                DistanceFn d) {
  std::vector<char> matched(ref.size(), 0);
  for (const auto& x : gen) {
    size_t arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < ref.size(); ++j) {
      const double dist = d(x, ref[j]);
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    matched[arg] = 1;
  }
  return static_cast<double>(std::count(matched.begin(), matched.end(), 1)) /
         static_cast<double>(ref.size());
}

template <typename DistanceFn>
double mmd(const std::vector<mvdd::PointCloud>& gen, const std::vector<mvdd::PointCloud>& ref,
           DistanceFn d) {
  double total = 0.0;
  for (const auto& y : ref) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x : gen) best = std::min(best, d(x, y));
    total += best;
  }
  return total / static_cast<double>(ref.size());
}

template <typename DistanceFn>
double one_nna(const std::vector<mvdd::PointCloud>& gen, const std::vector<mvdd::PointCloud>& ref,
               DistanceFn d) {
  const size_t g = gen.size(), total = gen.size() + ref.size();
  auto at = [&](size_t i) -> const mvdd::PointCloud& { return i < g ? gen[i] : ref[i - g]; };
  size_t correct = 0;
  for (size_t i = 0; i < total; ++i) {
    size_t best = total;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < total; ++j) {
      if (j == i) continue;
      const double dist = d(at(i), at(j));
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    if ((i < g) == (best < g)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Rotations of the canonical cube (+-1,+-1,+-1) keeping one vertex at `a`
// form a one-parameter spin family. Returns the smallest (over the family)
// of the largest distance from any of `centers` to its nearest cube vertex:
// a residual below tolerance means the centers are exactly such a cube.
inline double cube_fit_residual(const Eigen::Vector3d& a,
                                const std::vector<Eigen::Vector3d>& centers) {
  const Eigen::Vector3d a_hat = a.normalized();
  const Eigen::Vector3d v0 = Eigen::Vector3d(1, 1, 1).normalized();
  Eigen::Matrix3d align;
  {
    const Eigen::Vector3d axis = v0.cross(a_hat);
    const double c = v0.dot(a_hat);
    if (axis.norm() < 1e-12) {
      align = c > 0 ? Eigen::Matrix3d::Identity()
                    : Eigen::Matrix3d(Eigen::AngleAxisd(
                          M_PI, Eigen::Vector3d(1, 0, 0).cross(v0).normalized()));
    } else {
      align = Eigen::AngleAxisd(std::atan2(axis.norm(), c), axis.normalized()).toRotationMatrix();
    }
  }
  std::vector<Eigen::Vector3d> canonical;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) canonical.emplace_back(sx, sy, sz);

  auto residual_at = [&](double spin) {
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(spin, a_hat).toRotationMatrix() * align;
    double worst = 0.0;
    for (const auto& c : centers) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& v : canonical) best = std::min(best, (rot * v - c).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };

  double best = std::numeric_limits<double>::infinity();
  const int grid = 1440;
  for (int i = 0; i < grid; ++i) {
    const double spin = 2.0 * M_PI * i / grid;
    const double res = residual_at(spin);
    if (res < best) best = res;
    if (res < 0.05) {
      // golden-section refinement around the promising spin
      double lo = spin - 2.0 * M_PI / grid, hi = spin + 2.0 * M_PI / grid;
      for (int it = 0; it < 100; ++it) {
        const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
        if (residual_at(m1) < residual_at(m2)) hi = m2; else lo = m1;
      }
      best = std::min(best, residual_at(0.5 * (lo + hi)));
    }
  }
  return best;
}

// analytic visibility of a world point on a sphere centered at the origin
inline bool sphere_point_visible(const Eigen::Vector3d& point, double radius,
                                 const mvdd::Camera& camera) {
  const Eigen::Vector3d center = camera.pose.center();
  // outward normal must face the camera
  if (point.normalized().dot((center - point).normalized()) <= 0.0) return false;
  const Eigen::Vector3d cam_pt = camera.pose.to_camera(point);
  if (cam_pt.z() <= 0.0) return false;
  const auto proj = mvdd::project(cam_pt, camera.intrinsics);
  return proj.px >= 0 && proj.py >= 0 && proj.px <= camera.intrinsics.width - 1 &&
         proj.py <= camera.intrinsics.height - 1;
}

}  // namespace oracles
