#include "mvdd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mvdd {

DepthRange DepthRange::standard() {
  const double r = std::sqrt(3.0);
  return DepthRange{r - 1.0, r + 1.0};
}

DepthMapSet DepthMapSet::background(const CameraRig& rig, int height, int width,
                                    DepthRange range) {
  DepthMapSet maps;
  maps.views = rig.size();
  maps.height = height;
  maps.width = width;
  maps.rig = rig;
  maps.range = range;
  maps.values.assign(static_cast<size_t>(maps.views) * height * width, kBackgroundValue);
  return maps;
}

void DepthMapSet::clip() {
  for (double& v : values) v = std::clamp(v, -1.0, 1.0);
}

std::vector<double> DepthMapSet::world_view(int v) const {
  std::vector<double> out(static_cast<size_t>(height) * width);
  const auto src = view(v);
  for (size_t i = 0; i < out.size(); ++i) out[i] = range.denormalize(src[i]);
  return out;
}

VisibilityMask VisibilityMask::filled(int views, int height, int width, bool value) {
  VisibilityMask m;
  m.views = views;
  m.height = height;
  m.width = width;
  m.flags.assign(static_cast<size_t>(views) * height * width, value ? 1 : 0);
  return m;
}

Eigen::Vector3d back_project(double px, double py, double depth, const Intrinsics& k) {
  if (!(depth > 0.0)) throw std::invalid_argument("back_project: depth must be positive");
  return Eigen::Vector3d((px - k.cx) / k.fx * depth, (py - k.cy) / k.fy * depth, depth);
}

Projection project(const Eigen::Vector3d& p, const Intrinsics& k) {
  if (!(p.z() > 0.0)) throw std::invalid_argument("project: point behind camera");
  Projection out;
  out.px = k.fx * p.x() / p.z() + k.cx;
  out.py = k.fy * p.y() / p.z() + k.cy;
  out.depth = p.z();
  return out;
}

std::vector<Eigen::Vector3d> sample_ray_segment(double px, double py, double depth, int k,
                                                double delta, const Intrinsics& intr) {
  if (k < 1) throw std::invalid_argument("sample_ray_segment: k must be >= 1");
  if (delta < 0.0) throw std::invalid_argument("sample_ray_segment: delta must be >= 0");
  const double center = std::max(depth, kMinRayDepth);
  double lo = std::max(center - delta, kMinRayDepth);
  double hi = center + delta;
  std::vector<Eigen::Vector3d> points;
  points.reserve(k);
  if (k == 1) {
    points.push_back(back_project(px, py, center, intr));
    return points;
  }
  for (int i = 0; i < k; ++i) {
    const double d = lo + (hi - lo) * i / (k - 1);
    points.push_back(back_project(px, py, d, intr));
  }
  return points;
}

std::optional<double> bilinear_depth(std::span<const double> map, int width, int height,
                                     double x, double y) {
  if (!(x >= 0.0) || !(y >= 0.0) || !(x <= width - 1.0) || !(y <= height - 1.0))
    return std::nullopt;
  const int x0 = std::min(static_cast<int>(x), width - 2 >= 0 ? width - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), height - 2 >= 0 ? height - 2 : 0);
  if (width == 1 || height == 1) {
    // degenerate strips fall back to nearest
    const int xi = std::min(static_cast<int>(std::lround(x)), width - 1);
    const int yi = std::min(static_cast<int>(std::lround(y)), height - 1);
    return map[static_cast<size_t>(yi) * width + xi];
  }
  const double fx = x - x0, fy = y - y0;
  const double v00 = map[static_cast<size_t>(y0) * width + x0];
  const double v01 = map[static_cast<size_t>(y0) * width + x0 + 1];
  const double v10 = map[static_cast<size_t>(y0 + 1) * width + x0];
  const double v11 = map[static_cast<size_t>(y0 + 1) * width + x0 + 1];
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

bool cross_view_visibility(const Eigen::Vector3d& source_point_cam, const Camera& source,
                           const Camera& neighbor, std::span<const double> neighbor_world,
                           double tau) {
  const Eigen::Vector3d world = source.pose.to_world(source_point_cam);
  const Eigen::Vector3d in_neighbor = neighbor.pose.to_camera(world);
  if (!(in_neighbor.z() > 0.0)) return false;
  const Projection proj = project(in_neighbor, neighbor.intrinsics);
  const auto stored = bilinear_depth(neighbor_world, neighbor.intrinsics.width,
                                     neighbor.intrinsics.height, proj.px, proj.py);
  if (!stored) return false;
  return std::abs(in_neighbor.z() - *stored) < tau;
}

std::optional<double> fusion_reprojected_depth(int px, int py, const Camera& source,
                                               std::span<const double> source_world,
                                               const Camera& neighbor,
                                               std::span<const double> neighbor_world,
                                               const FusionThresholds& thresholds) {
  const int w = source.intrinsics.width, h = source.intrinsics.height;
  const double own = source_world[static_cast<size_t>(py) * w + px];
  if (!(own > 0.0)) return std::nullopt;

  // forward: source pixel -> world -> neighbor pixel
  const Eigen::Vector3d p_src = back_project(px, py, own, source.intrinsics);
  const Eigen::Vector3d world = source.pose.to_world(p_src);
  const Eigen::Vector3d p_nbr = neighbor.pose.to_camera(world);
  if (!(p_nbr.z() > 0.0)) return std::nullopt;
  const Projection at_nbr = project(p_nbr, neighbor.intrinsics);
  const auto nbr_depth = bilinear_depth(neighbor_world, neighbor.intrinsics.width,
                                        neighbor.intrinsics.height, at_nbr.px, at_nbr.py);
  if (!nbr_depth || !(*nbr_depth > 0.0)) return std::nullopt;

  // reproject the neighbor's stored depth back into the source view
  const Eigen::Vector3d q_nbr = back_project(at_nbr.px, at_nbr.py, *nbr_depth, neighbor.intrinsics);
  const Eigen::Vector3d q_world = neighbor.pose.to_world(q_nbr);
  const Eigen::Vector3d q_src = source.pose.to_camera(q_world);
  if (!(q_src.z() > 0.0)) return std::nullopt;
  const Projection back = project(q_src, source.intrinsics);

  const double pixel_err = std::hypot(back.px - px, back.py - py);
  if (!(pixel_err < thresholds.psi_max)) return std::nullopt;
  const double depth_err = std::abs(own - q_src.z()) / own;
  if (!(depth_err < thresholds.epsilon_rel)) return std::nullopt;
  return q_src.z();
}

bool fusion_visibility(int px, int py, const Camera& source, std::span<const double> source_world,
                       const Camera& neighbor, std::span<const double> neighbor_world,
                       const FusionThresholds& thresholds) {
  return fusion_reprojected_depth(px, py, source, source_world, neighbor, neighbor_world,
                                  thresholds)
      .has_value();
}

DepthMapSet depth_average(const DepthMapSet& maps, const FusionThresholds& thresholds) {
  // frozen snapshot of every view in world units
  std::vector<std::vector<double>> world(maps.views);
  for (int v = 0; v < maps.views; ++v) world[v] = maps.world_view(v);

  DepthMapSet out = maps;
  for (int v = 0; v < maps.views; ++v) {
    const Camera& cam = maps.rig.cameras[v];
    for (int y = 0; y < maps.height; ++y) {
      for (int x = 0; x < maps.width; ++x) {
        const double own = world[v][static_cast<size_t>(y) * maps.width + x];
        if (!(own > 0.0)) continue;
        double sum = own;
        int count = 1;
        for (int r = 0; r < maps.views; ++r) {
          if (r == v) continue;
          const auto reproj = fusion_reprojected_depth(x, y, cam, world[v], maps.rig.cameras[r],
                                                       world[r], thresholds);
          if (reproj) {
            sum += *reproj;
            ++count;
          }
        }
        if (count > 1) out.at(v, y, x) = maps.range.normalize(sum / count);
      }
    }
  }
  return out;
}

VisibilityMask depth_filter(const DepthMapSet& maps, const FusionThresholds& thresholds,
                            int min_views) {
  VisibilityMask mask = VisibilityMask::filled(maps.views, maps.height, maps.width, false);
  if (min_views <= 0) return VisibilityMask::filled(maps.views, maps.height, maps.width, true);

  std::vector<std::vector<double>> world(maps.views);
  for (int v = 0; v < maps.views; ++v) world[v] = maps.world_view(v);

  for (int v = 0; v < maps.views; ++v) {
    const Camera& cam = maps.rig.cameras[v];
    for (int y = 0; y < maps.height; ++y) {
      for (int x = 0; x < maps.width; ++x) {
        int support = 0;
        for (int r = 0; r < maps.views && support < min_views; ++r) {
          if (r == v) continue;
          if (fusion_visibility(x, y, cam, world[v], maps.rig.cameras[r], world[r], thresholds))
            ++support;
        }
        mask.set(v, y, x, support >= min_views);
      }
    }
  }
  return mask;
}

PointCloud fuse_to_pointcloud(const DepthMapSet& maps, const VisibilityMask& mask) {
  if (mask.views != maps.views || mask.height != maps.height || mask.width != maps.width)
    throw std::invalid_argument("fuse_to_pointcloud: mask dimensions mismatch");
  PointCloud cloud;
  for (int v = 0; v < maps.views; ++v) {
    const Camera& cam = maps.rig.cameras[v];
    for (int y = 0; y < maps.height; ++y) {
      for (int x = 0; x < maps.width; ++x) {
        const double value = maps.at(v, y, x);
        if (value >= kForegroundLimit) continue;  // background
        if (!mask.at(v, y, x)) continue;
        const double depth = maps.range.denormalize(value);
        if (!(depth > 0.0)) continue;
        const Eigen::Vector3d p = back_project(x, y, depth, cam.intrinsics);
        cloud.points.push_back(cam.pose.to_world(p));
      }
    }
  }
  return cloud;
}

void write_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ply: cannot open " + path);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : cloud.points) {
    const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  if (!out) throw std::runtime_error("write_ply: write failed for " + path);
}

PointCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ply: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error("read_ply: not a PLY file: " + path);
  size_t vertex_count = 0;
  int property_count = 0;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = (fmt == "binary_little_endian");
    } else if (word == "element") {
      std::string what;
      ls >> what >> vertex_count;
      if (what != "vertex") throw std::runtime_error("read_ply: unsupported element " + what);
    } else if (word == "property") {
      ++property_count;
    } else if (word == "end_header") {
      break;
    }
  }
  if (!binary_le) throw std::runtime_error("read_ply: only binary little-endian supported");
  if (property_count < 3) throw std::runtime_error("read_ply: expected x/y/z properties");
  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  std::vector<float> row(property_count);
  for (size_t i = 0; i < vertex_count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), property_count * sizeof(float));
    if (!in) throw std::runtime_error("read_ply: truncated payload in " + path);
    cloud.points.emplace_back(row[0], row[1], row[2]);
  }
  return cloud;
}

DepthMapSet pooled_half(const DepthMapSet& maps) {
  if (maps.height % 2 != 0 || maps.width % 2 != 0)
    throw std::invalid_argument("pooled_half: odd resolution");
  DepthMapSet out;
  out.views = maps.views;
  out.height = maps.height / 2;
  out.width = maps.width / 2;
  out.range = maps.range;
  out.rig = maps.rig;
  for (auto& cam : out.rig.cameras) cam.intrinsics = cam.intrinsics.scaled(2);
  out.values.resize(static_cast<size_t>(out.views) * out.height * out.width);
  for (int v = 0; v < out.views; ++v)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(v, y, x) = 0.25 * (maps.at(v, 2 * y, 2 * x) + maps.at(v, 2 * y, 2 * x + 1) +
                                  maps.at(v, 2 * y + 1, 2 * x) + maps.at(v, 2 * y + 1, 2 * x + 1));
  return out;
}

}  // namespace mvdd
