#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace mvdd {

/// Pinhole intrinsics. Pixel coordinates are continuous with integer values
/// at pixel centers, x along width and y along height.
struct Intrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  // fx = fy = height, principal point at the image center
  static Intrinsics centered(int width, int height);

  // intrinsics of the image after `factor`-times 2x2 average pooling,
  // keeping pixel centers aligned
  Intrinsics scaled(int factor) const;

  Eigen::Matrix3d matrix() const;

  void validate() const;  // throws std::invalid_argument on violation
};

/// World-to-camera rigid transform.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation * world + translation;
  }
  Eigen::Vector3d to_world(const Eigen::Vector3d& camera) const {
    return rotation.transpose() * (camera - translation);
  }
  Eigen::Matrix4d matrix4() const;
};

struct Camera {
  Intrinsics intrinsics;
  Pose pose;
};

struct CameraRig {
  std::vector<Camera> cameras;
  double sphere_radius = 0.0;

  int size() const { return static_cast<int>(cameras.size()); }
};

// Rotation matrix about `axis` by `angle`, quaternion components
// a = cos(theta/2), (b,c,d) = -axis_hat * sin(theta/2). Note the sign
// convention rotates clockwise about the axis under the right-hand rule.
Eigen::Matrix3d rodrigues_rotation(const Eigen::Vector3d& axis, double angle);

struct LookAtResult {
  Pose pose;
  bool used_fallback_up = false;
};

// Camera at `center` looking at `target`, +z forward, y down in image space.
// A degenerate up hint falls back to a secondary axis and sets the flag.
LookAtResult look_at_pose(const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up_hint = Eigen::Vector3d(0, 0, 1));

// Eight cameras at the vertices of the fixed layout: elevations 30deg and
// -10deg, azimuths 45/135/225/315deg, sphere radius sqrt(3), order A..H.
// Other view counts (toy runs) place cameras at evenly spaced azimuths with
// alternating elevations on the same sphere.
CameraRig fixed_cuboid_rig(const Intrinsics& intrinsics, int views = 8);

struct DynamicRigResult {
  CameraRig rig;
  bool rescaled_first_center = false;
};

// Cube rig determined by a freely placed first camera A on the sphere of
// radius sqrt(3); B,C,D rotate A about the ABCD-plane normal, E..H close the
// cube from face midpoints. Throws std::invalid_argument when A is at a pole
// (x = z = 0) where the plane constraint degenerates.
DynamicRigResult dynamic_cube_rig(const Eigen::Vector3d& first_center,
                                  const Intrinsics& intrinsics);

// Row v is view v's 4x4 world-to-camera matrix flattened row-major.
Eigen::MatrixXd flatten_extrinsics(const CameraRig& rig);

// Indices of the `count` cameras nearest to `view` by center distance,
// excluding `view` itself; ties broken by lower index.
std::vector<int> nearest_neighbors(const CameraRig& rig, int view, int count);

std::string rig_to_json(const CameraRig& rig);
CameraRig rig_from_json(const std::string& json_text);
void save_rig(const std::string& path, const CameraRig& rig);
CameraRig load_rig(const std::string& path);

}  // namespace mvdd
