#include "mvdd/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mvdd {

namespace {
constexpr double kRigRadius = 1.7320508075688772;  // sqrt(3)
}

Intrinsics Intrinsics::centered(int width, int height) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = static_cast<double>(height);
  k.fy = static_cast<double>(height);
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  return k;
}

Intrinsics Intrinsics::scaled(int factor) const {
  if (factor < 1) throw std::invalid_argument("Intrinsics::scaled: factor must be >= 1");
  const double s = static_cast<double>(factor);
  Intrinsics k;
  k.width = width / factor;
  k.height = height / factor;
  k.fx = fx / s;
  k.fy = fy / s;
  // pixel centers of the pooled grid: x_l = (x + 0.5)/s - 0.5
  k.cx = (cx + 0.5) / s - 0.5;
  k.cy = (cy + 0.5) / s - 0.5;
  return k;
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d a;
  a << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return a;
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: image size must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::invalid_argument("intrinsics: principal point outside image");
}

Eigen::Matrix4d Pose::matrix4() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = rotation;
  m.block<3, 1>(0, 3) = translation;
  return m;
}

Eigen::Matrix3d rodrigues_rotation(const Eigen::Vector3d& axis, double angle) {
  const double n = axis.norm();
  if (n <= 0.0) throw std::invalid_argument("rodrigues_rotation: zero-length axis");
  const Eigen::Vector3d u = axis / n;
  const double a = std::cos(angle / 2.0);
  const Eigen::Vector3d bcd = -u * std::sin(angle / 2.0);
  const double b = bcd.x(), c = bcd.y(), d = bcd.z();
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c;
  return r;
}

LookAtResult look_at_pose(const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up_hint) {
  const Eigen::Vector3d offset = target - center;
  if (offset.norm() <= 0.0) throw std::invalid_argument("look_at_pose: center equals target");
  const Eigen::Vector3d forward = offset.normalized();

  LookAtResult result;
  Eigen::Vector3d right = forward.cross(up_hint);
  if (right.norm() < 1e-9) {
    result.used_fallback_up = true;
    const Eigen::Vector3d fallback(0, 1, 0);
    right = forward.cross(fallback);
    if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d(1, 0, 0));
  }
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right).normalized();

  result.pose.rotation.row(0) = right;
  result.pose.rotation.row(1) = down;
  result.pose.rotation.row(2) = forward;
  result.pose.translation = -result.pose.rotation * center;
  return result;
}

namespace {

Eigen::Vector3d spherical_center(double elevation_deg, double azimuth_deg) {
  const double el = elevation_deg * M_PI / 180.0;
  const double az = azimuth_deg * M_PI / 180.0;
  return kRigRadius *
         Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

CameraRig rig_from_centers(const std::vector<Eigen::Vector3d>& centers,
                           const Intrinsics& intrinsics) {
  CameraRig rig;
  rig.sphere_radius = kRigRadius;
  rig.cameras.reserve(centers.size());
  for (const auto& c : centers) {
    Camera cam;
    cam.intrinsics = intrinsics;
    cam.pose = look_at_pose(c, Eigen::Vector3d::Zero()).pose;
    rig.cameras.push_back(cam);
  }
  return rig;
}

}  // namespace

CameraRig fixed_cuboid_rig(const Intrinsics& intrinsics, int views) {
  intrinsics.validate();
  if (views < 1) throw std::invalid_argument("fixed_cuboid_rig: views must be >= 1");

  std::vector<Eigen::Vector3d> centers;
  if (views == 8) {
    // vertices A,F,H,D at elevation 30deg, azimuths 45/135/225/315;
    // G,C,B,E at elevation -10deg, same azimuths; ordered A..H
    centers = {
        spherical_center(30, 45),    // A
        spherical_center(-10, 225),  // B
        spherical_center(-10, 135),  // C
        spherical_center(30, 315),   // D
        spherical_center(-10, 315),  // E
        spherical_center(30, 135),   // F
        spherical_center(-10, 45),   // G
        spherical_center(30, 225),   // H
    };
  } else {
    for (int v = 0; v < views; ++v) {
      const double az = 45.0 + 360.0 * v / views;
      const double el = (v % 2 == 0) ? 30.0 : -10.0;
      centers.push_back(spherical_center(el, az));
    }
  }
  return rig_from_centers(centers, intrinsics);
}

DynamicRigResult dynamic_cube_rig(const Eigen::Vector3d& first_center,
                                  const Intrinsics& intrinsics) {
  intrinsics.validate();
  const double norm = first_center.norm();
  if (norm <= 0.0) throw std::invalid_argument("dynamic_cube_rig: zero first center");

  DynamicRigResult result;
  Eigen::Vector3d a = first_center;
  if (std::abs(norm - kRigRadius) > 1e-6) {
    a *= kRigRadius / norm;
    result.rescaled_first_center = true;
  }

  if (std::abs(a.x()) < 1e-9 && std::abs(a.z()) < 1e-9)
    throw std::invalid_argument("dynamic_cube_rig: first center at a pole, ABCD plane undefined");

  // plane ABCD: x/X = z/Z, normal (Z, 0, -X)
  const Eigen::Vector3d plane_normal(a.z(), 0.0, -a.x());
  const double theta_edge = 2.0 * std::atan(std::sqrt(2.0));
  const double theta_side = 2.0 * std::atan(1.0 / std::sqrt(2.0));

  const Eigen::Vector3d b = rodrigues_rotation(plane_normal, theta_edge) * a;
  const Eigen::Vector3d c = rodrigues_rotation(plane_normal, theta_edge + theta_side) * a;
  const Eigen::Vector3d d =
      rodrigues_rotation(plane_normal, 2.0 * theta_edge + theta_side) * a;

  const Eigen::Vector3d ab = b - a;
  const Eigen::Vector3d ad = d - a;
  const Eigen::Vector3d n = ab.cross(ad).normalized();
  const double half_ab = 0.5 * ab.norm();

  const Eigen::Vector3d e = 0.5 * (a + b) + n * half_ab;
  const Eigen::Vector3d f = 0.5 * (a + b) - n * half_ab;
  const Eigen::Vector3d g = 0.5 * (c + d) + n * half_ab;
  const Eigen::Vector3d h = 0.5 * (c + d) - n * half_ab;

  result.rig = rig_from_centers({a, b, c, d, e, f, g, h}, intrinsics);
  return result;
}

Eigen::MatrixXd flatten_extrinsics(const CameraRig& rig) {
  Eigen::MatrixXd rows(rig.size(), 16);
  for (int v = 0; v < rig.size(); ++v) {
    const Eigen::Matrix4d m = rig.cameras[v].pose.matrix4();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) rows(v, 4 * r + c) = m(r, c);
  }
  return rows;
}

std::vector<int> nearest_neighbors(const CameraRig& rig, int view, int count) {
  if (view < 0 || view >= rig.size()) throw std::invalid_argument("nearest_neighbors: bad view");
  if (count > rig.size() - 1)
    throw std::invalid_argument("nearest_neighbors: count exceeds available views");
  const Eigen::Vector3d c0 = rig.cameras[view].pose.center();
  std::vector<std::pair<double, int>> order;
  for (int v = 0; v < rig.size(); ++v) {
    if (v == view) continue;
    order.emplace_back((rig.cameras[v].pose.center() - c0).norm(), v);
  }
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(order[i].second);
  return out;
}

std::string rig_to_json(const CameraRig& rig) {
  nlohmann::json doc;
  doc["sphere_radius"] = rig.sphere_radius;
  doc["cameras"] = nlohmann::json::array();
  for (const auto& cam : rig.cameras) {
    nlohmann::json j;
    j["intrinsics"] = {{"fx", cam.intrinsics.fx}, {"fy", cam.intrinsics.fy},
                       {"cx", cam.intrinsics.cx}, {"cy", cam.intrinsics.cy},
                       {"width", cam.intrinsics.width}, {"height", cam.intrinsics.height}};
    std::vector<double> rot(9), tr(3);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot[3 * r + c] = cam.pose.rotation(r, c);
    for (int r = 0; r < 3; ++r) tr[r] = cam.pose.translation(r);
    j["rotation"] = rot;
    j["translation"] = tr;
    doc["cameras"].push_back(j);
  }
  return doc.dump();
}

CameraRig rig_from_json(const std::string& json_text) {
  const auto doc = nlohmann::json::parse(json_text);
  CameraRig rig;
  rig.sphere_radius = doc.at("sphere_radius").get<double>();
  for (const auto& j : doc.at("cameras")) {
    Camera cam;
    const auto& k = j.at("intrinsics");
    cam.intrinsics.fx = k.at("fx").get<double>();
    cam.intrinsics.fy = k.at("fy").get<double>();
    cam.intrinsics.cx = k.at("cx").get<double>();
    cam.intrinsics.cy = k.at("cy").get<double>();
    cam.intrinsics.width = k.at("width").get<int>();
    cam.intrinsics.height = k.at("height").get<int>();
    const auto rot = j.at("rotation").get<std::vector<double>>();
    const auto tr = j.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3)
      throw std::invalid_argument("rig_from_json: malformed pose");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = rot[3 * r + c];
    for (int r = 0; r < 3; ++r) cam.pose.translation(r) = tr[r];
    rig.cameras.push_back(cam);
  }
  return rig;
}

void save_rig(const std::string& path, const CameraRig& rig) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_rig: cannot open " + path);
  out << rig_to_json(rig);
}

CameraRig load_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_rig: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return rig_from_json(buf.str());
}

}  // namespace mvdd
