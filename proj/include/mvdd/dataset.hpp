#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvdd/geometry.hpp"

namespace mvdd {

enum class ShapeKind { kSphere, kBox, kCylinder, kUnionOfTwo };

/// Analytic primitive contained in the unit ball. Boxes are axis-aligned,
/// cylinders are z-axis aligned, the union kind is two spheres.
struct PrimitiveShape {
  ShapeKind kind = ShapeKind::kSphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Zero();  // box
  double radius = 0.0;                                     // sphere, cylinder, union part 1
  double half_height = 0.0;                                // cylinder
  Eigen::Vector3d center2 = Eigen::Vector3d::Zero();       // union part 2
  double radius2 = 0.0;
  uint64_t seed = 0;

  // furthest surface point from the origin
  double max_extent() const;
};

// smallest positive ray parameter, nullopt on miss; `dir` need not be unit
std::optional<double> ray_hit(const PrimitiveShape& shape, const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& dir);

PrimitiveShape sample_shape(uint64_t seed);
PrimitiveShape sample_shape(uint64_t seed, std::span<const ShapeKind> kinds);

// World-unit z-depth per pixel, smallest positive hit; misses hold the far
// sentinel of `range`.
std::vector<double> render_depth(const PrimitiveShape& shape, const Camera& camera,
                                 DepthRange range = DepthRange::standard());

// affine near -> -1, far -> +1, clipped to [-1, 1]
std::vector<double> normalize_depth(std::span<const double> raw, DepthRange range);

// all rig views rendered and normalized
DepthMapSet render_views(const PrimitiveShape& shape, const CameraRig& rig,
                         DepthRange range = DepthRange::standard());

struct DatasetManifest {
  int count = 0;
  int views = 0, height = 0, width = 0;
  double near = 0.0, far = 0.0;
};

struct Dataset {
  DatasetManifest manifest;
  CameraRig rig;
  std::vector<float> payload;  // count x views x height x width

  int count() const { return manifest.count; }
  DepthMapSet sample(int index) const;
  std::vector<DepthMapSet> all_samples() const;
};

void build_dataset(int count, const CameraRig& rig, uint64_t seed, const std::string& path,
                   std::span<const ShapeKind> kinds = {},
                   DepthRange range = DepthRange::standard());

// Same container layout for depth sets produced by the samplers.
void save_depth_container(const std::string& path, std::span<const DepthMapSet> samples);

Dataset load_dataset(const std::string& path);

}  // namespace mvdd
