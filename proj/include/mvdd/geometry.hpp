#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mvdd/camera.hpp"

namespace mvdd {

/// Affine map between world-unit depth and the normalized [-1, 1] range.
struct DepthRange {
  double near = 0.0;
  double far = 0.0;

  // [sqrt(3) - 1, sqrt(3) + 1]: unit-ball objects seen from the rig sphere
  static DepthRange standard();

  double normalize(double world) const { return (world - near) / (far - near) * 2.0 - 1.0; }
  double denormalize(double value) const { return near + (value + 1.0) * 0.5 * (far - near); }
};

inline constexpr double kBackgroundValue = 1.0;
inline constexpr double kForegroundLimit = 1.0 - 1e-4;
inline constexpr double kMinRayDepth = 1e-4;

/// N stacked depth maps in normalized units plus the rig that produced them.
/// This is the diffusion state; values may leave [-1, 1] mid-sampling and are
/// clipped at rest.
struct DepthMapSet {
  int views = 0, height = 0, width = 0;
  std::vector<double> values;  // views x height x width
  CameraRig rig;
  DepthRange range = DepthRange::standard();

  static DepthMapSet background(const CameraRig& rig, int height, int width,
                                DepthRange range = DepthRange::standard());

  double& at(int v, int y, int x) { return values[(static_cast<size_t>(v) * height + y) * width + x]; }
  double at(int v, int y, int x) const { return values[(static_cast<size_t>(v) * height + y) * width + x]; }
  std::span<const double> view(int v) const {
    return std::span<const double>(values).subspan(static_cast<size_t>(v) * height * width,
                                                   static_cast<size_t>(height) * width);
  }
  std::span<double> view(int v) {
    return std::span<double>(values).subspan(static_cast<size_t>(v) * height * width,
                                             static_cast<size_t>(height) * width);
  }
  void clip();
  // world-unit copy of one view
  std::vector<double> world_view(int v) const;
};

struct VisibilityMask {
  int views = 0, height = 0, width = 0;
  std::vector<uint8_t> flags;

  static VisibilityMask filled(int views, int height, int width, bool value);
  bool at(int v, int y, int x) const { return flags[(static_cast<size_t>(v) * height + y) * width + x] != 0; }
  void set(int v, int y, int x, bool value) {
    flags[(static_cast<size_t>(v) * height + y) * width + x] = value ? 1 : 0;
  }
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;

  int size() const { return static_cast<int>(points.size()); }
};

// Lift pixel (px, py) with z-depth `depth` to camera coordinates. Throws on
// non-positive depth.
Eigen::Vector3d back_project(double px, double py, double depth, const Intrinsics& intrinsics);

struct Projection {
  double px = 0.0, py = 0.0;
  double depth = 0.0;
};

// Perspective projection of a camera-space point; throws when z <= 0.
Projection project(const Eigen::Vector3d& camera_point, const Intrinsics& intrinsics);

// k points on the ray through (px, py) with depths evenly spaced over
// [depth - delta, depth + delta]; the lower end is clamped to a small
// positive depth when necessary.
std::vector<Eigen::Vector3d> sample_ray_segment(double px, double py, double depth, int k,
                                                double delta, const Intrinsics& intrinsics);

// Bilinear lookup; nullopt outside [0, w-1] x [0, h-1].
std::optional<double> bilinear_depth(std::span<const double> map, int width, int height,
                                     double x, double y);

// Cross-attention visibility: transform the source-camera point into the
// neighbor frame and compare its z against the neighbor's depth map (world
// units) at the projected pixel; out-of-bounds or behind-camera is invisible.
bool cross_view_visibility(const Eigen::Vector3d& source_point_cam, const Camera& source,
                           const Camera& neighbor, std::span<const double> neighbor_world,
                           double tau);

struct FusionThresholds {
  double psi_max = 1.0;      // pixels
  double epsilon_rel = 0.01; // relative depth
};

// Forward-project pixel (px, py) of the source view into the neighbor,
// reproject with the neighbor's stored depth, and accept when both the pixel
// and relative-depth discrepancies stay below the thresholds. On success
// returns the reprojected depth in the source camera.
std::optional<double> fusion_reprojected_depth(int px, int py, const Camera& source,
                                               std::span<const double> source_world,
                                               const Camera& neighbor,
                                               std::span<const double> neighbor_world,
                                               const FusionThresholds& thresholds);

bool fusion_visibility(int px, int py, const Camera& source, std::span<const double> source_world,
                       const Camera& neighbor, std::span<const double> neighbor_world,
                       const FusionThresholds& thresholds);

// Replace each pixel's depth with the mean of its own value and the
// reprojected depths from all views passing fusion_visibility, computed from
// a frozen snapshot of the input. Works in world units internally.
DepthMapSet depth_average(const DepthMapSet& maps, const FusionThresholds& thresholds);

// Mask of pixels supported by at least `min_views` neighbor views.
VisibilityMask depth_filter(const DepthMapSet& maps, const FusionThresholds& thresholds,
                            int min_views);

// One world point per unmasked foreground pixel.
PointCloud fuse_to_pointcloud(const DepthMapSet& maps, const VisibilityMask& mask);

void write_ply(const std::string& path, const PointCloud& cloud);
PointCloud read_ply(const std::string& path);

// 2x2 average pooling of every view, with intrinsics rescaled to match.
DepthMapSet pooled_half(const DepthMapSet& maps);

}  // namespace mvdd
