#include "mvdd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mvdd/parallel.hpp"
#include "mvdd/rng.hpp"

namespace mvdd {

namespace {

std::optional<double> hit_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                 const Eigen::Vector3d& c, double r) {
  const Eigen::Vector3d oc = o - c;
  const double a = d.squaredNorm();
  const double b = 2.0 * oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - 4.0 * a * cc;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / (2.0 * a);
  const double t1 = (-b + sq) / (2.0 * a);
  if (t0 > 0.0) return t0;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

std::optional<double> hit_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                              const Eigen::Vector3d& c, const Eigen::Vector3d& e) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double lo = c[axis] - e[axis], hi = c[axis] + e[axis];
    if (std::abs(d[axis]) < 1e-15) {
      if (o[axis] < lo || o[axis] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o[axis]) / d[axis];
    double t1 = (hi - o[axis]) / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmin > 0.0) return tmin;
  if (tmax > 0.0) return tmax;
  return std::nullopt;
}

std::optional<double> hit_cylinder(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                   const Eigen::Vector3d& c, double r, double hh) {
  double best = std::numeric_limits<double>::infinity();
  const Eigen::Vector3d oc = o - c;
  // side surface
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (oc.x() * d.x() + oc.y() * d.y());
    const double cc = oc.x() * oc.x() + oc.y() * oc.y() - r * r;
    const double disc = b * b - 4.0 * a * cc;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (const double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (t <= 0.0) continue;
        const double z = oc.z() + t * d.z();
        if (std::abs(z) <= hh) best = std::min(best, t);
      }
    }
  }
  // caps
  if (std::abs(d.z()) > 1e-15) {
    for (const double zcap : {-hh, hh}) {
      const double t = (zcap - oc.z()) / d.z();
      if (t <= 0.0) continue;
      const double x = oc.x() + t * d.x();
      const double y = oc.y() + t * d.y();
      if (x * x + y * y <= r * r) best = std::min(best, t);
    }
  }
  if (std::isinf(best)) return std::nullopt;
  return best;
}

}  // namespace

double PrimitiveShape::max_extent() const {
  switch (kind) {
    case ShapeKind::kSphere:
      return center.norm() + radius;
    case ShapeKind::kBox:
      return (center.cwiseAbs() + half_extents).norm();
    case ShapeKind::kCylinder: {
      const double radial = std::hypot(center.x(), center.y()) + radius;
      const double axial = std::abs(center.z()) + half_height;
      return std::hypot(radial, axial);
    }
    case ShapeKind::kUnionOfTwo:
      return std::max(center.norm() + radius, center2.norm() + radius2);
  }
  return 0.0;
}

std::optional<double> ray_hit(const PrimitiveShape& shape, const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& dir) {
  switch (shape.kind) {
    case ShapeKind::kSphere:
      if (shape.radius <= 0.0) return std::nullopt;
      return hit_sphere(origin, dir, shape.center, shape.radius);
    case ShapeKind::kBox:
      if (shape.half_extents.minCoeff() <= 0.0) return std::nullopt;
      return hit_box(origin, dir, shape.center, shape.half_extents);
    case ShapeKind::kCylinder:
      if (shape.radius <= 0.0 || shape.half_height <= 0.0) return std::nullopt;
      return hit_cylinder(origin, dir, shape.center, shape.radius, shape.half_height);
    case ShapeKind::kUnionOfTwo: {
      const auto h1 = shape.radius > 0.0 ? hit_sphere(origin, dir, shape.center, shape.radius)
                                         : std::nullopt;
      const auto h2 = shape.radius2 > 0.0
                          ? hit_sphere(origin, dir, shape.center2, shape.radius2)
                          : std::nullopt;
      if (h1 && h2) return std::min(*h1, *h2);
      return h1 ? h1 : h2;
    }
  }
  return std::nullopt;
}

PrimitiveShape sample_shape(uint64_t seed) {
  static const ShapeKind all[] = {ShapeKind::kSphere, ShapeKind::kBox, ShapeKind::kCylinder,
                                  ShapeKind::kUnionOfTwo};
  return sample_shape(seed, all);
}

PrimitiveShape sample_shape(uint64_t seed, std::span<const ShapeKind> kinds) {
  if (kinds.empty()) throw std::invalid_argument("sample_shape: no kinds");
  Rng rng(seed);
  PrimitiveShape shape;
  shape.seed = seed;
  shape.kind = kinds[rng.uniform_int(0, static_cast<int>(kinds.size()) - 1)];
  auto in_range = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  switch (shape.kind) {
    case ShapeKind::kSphere:
      shape.radius = in_range(0.3, 0.8);
      break;
    case ShapeKind::kBox:
      shape.half_extents =
          Eigen::Vector3d(in_range(0.25, 0.7), in_range(0.25, 0.7), in_range(0.25, 0.7));
      break;
    case ShapeKind::kCylinder:
      shape.radius = in_range(0.2, 0.5);
      shape.half_height = 0.5 * in_range(0.4, 1.2);
      break;
    case ShapeKind::kUnionOfTwo: {
      const double cz = in_range(0.0, 0.3);
      shape.center = Eigen::Vector3d(0, 0, cz);
      shape.center2 = Eigen::Vector3d(0, 0, -cz);
      shape.radius = in_range(0.25, 0.6);
      shape.radius2 = in_range(0.25, 0.6);
      break;
    }
  }
  // rescale into the unit ball when necessary
  const double extent = shape.max_extent();
  if (extent > 1.0) {
    const double s = 1.0 / extent;
    shape.center *= s;
    shape.center2 *= s;
    shape.half_extents *= s;
    shape.radius *= s;
    shape.radius2 *= s;
    shape.half_height *= s;
  }
  return shape;
}

std::vector<double> render_depth(const PrimitiveShape& shape, const Camera& camera,
                                 DepthRange range) {
  const int w = camera.intrinsics.width, h = camera.intrinsics.height;
  std::vector<double> depth(static_cast<size_t>(w) * h, range.far);
  const Eigen::Vector3d origin = camera.pose.center();
  const Eigen::Matrix3d rt = camera.pose.rotation.transpose();
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      // direction with camera-frame z = 1, so the ray parameter is z-depth
      const Eigen::Vector3d dir_cam((x - camera.intrinsics.cx) / camera.intrinsics.fx,
                                    (y - camera.intrinsics.cy) / camera.intrinsics.fy, 1.0);
      const auto hit = ray_hit(shape, origin, rt * dir_cam);
      if (hit) depth[static_cast<size_t>(y) * w + x] = std::clamp(*hit, range.near, range.far);
    }
  });
  return depth;
}

std::vector<double> normalize_depth(std::span<const double> raw, DepthRange range) {
  if (!(range.near < range.far)) throw std::invalid_argument("normalize_depth: near >= far");
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i)
    out[i] = std::clamp(range.normalize(raw[i]), -1.0, 1.0);
  return out;
}

DepthMapSet render_views(const PrimitiveShape& shape, const CameraRig& rig, DepthRange range) {
  if (rig.size() < 1) throw std::invalid_argument("render_views: empty rig");
  const int h = rig.cameras[0].intrinsics.height;
  const int w = rig.cameras[0].intrinsics.width;
  DepthMapSet maps = DepthMapSet::background(rig, h, w, range);
  for (int v = 0; v < rig.size(); ++v) {
    const auto raw = render_depth(shape, rig.cameras[v], range);
    const auto norm = normalize_depth(raw, range);
    std::copy(norm.begin(), norm.end(), maps.view(v).begin());
  }
  return maps;
}

namespace {

constexpr char kMagic[4] = {'M', 'V', 'D', 'D'};
constexpr uint32_t kDatasetVersion = 1;

}  // namespace

void build_dataset(int count, const CameraRig& rig, uint64_t seed, const std::string& path,
                   std::span<const ShapeKind> kinds, DepthRange range) {
  if (count < 1) throw std::invalid_argument("build_dataset: count must be >= 1");
  if (rig.size() < 1) throw std::invalid_argument("build_dataset: empty rig");
  const int h = rig.cameras[0].intrinsics.height;
  const int w = rig.cameras[0].intrinsics.width;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("build_dataset: cannot open " + path);

  nlohmann::json manifest;
  manifest["kind"] = "dataset";
  manifest["count"] = count;
  manifest["N"] = rig.size();
  manifest["H"] = h;
  manifest["W"] = w;
  manifest["near"] = range.near;
  manifest["far"] = range.far;
  manifest["rig"] = nlohmann::json::parse(rig_to_json(rig));
  std::vector<uint64_t> seeds(count);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) seeds[i] = rng.next_u64();
  manifest["seeds"] = seeds;
  const std::string text = manifest.dump();

  out.write(kMagic, 4);
  const uint32_t version = kDatasetVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint32_t len = static_cast<uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));

  for (int i = 0; i < count; ++i) {
    const PrimitiveShape shape =
        kinds.empty() ? sample_shape(seeds[i]) : sample_shape(seeds[i], kinds);
    const DepthMapSet maps = render_views(shape, rig, range);
    std::vector<float> data(maps.values.begin(), maps.values.end());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("build_dataset: write failed for " + path);
}

void save_depth_container(const std::string& path, std::span<const DepthMapSet> samples) {
  if (samples.empty()) throw std::invalid_argument("save_depth_container: no samples");
  const DepthMapSet& first = samples[0];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_depth_container: cannot open " + path);

  nlohmann::json manifest;
  manifest["kind"] = "dataset";
  manifest["count"] = static_cast<int>(samples.size());
  manifest["N"] = first.views;
  manifest["H"] = first.height;
  manifest["W"] = first.width;
  manifest["near"] = first.range.near;
  manifest["far"] = first.range.far;
  manifest["rig"] = nlohmann::json::parse(rig_to_json(first.rig));
  const std::string text = manifest.dump();

  out.write(kMagic, 4);
  const uint32_t version = kDatasetVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint32_t len = static_cast<uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const DepthMapSet& maps : samples) {
    std::vector<float> data(maps.values.begin(), maps.values.end());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_depth_container: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_dataset: bad magic in " + path);
  uint32_t version = 0, len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (version != kDatasetVersion) throw std::runtime_error("load_dataset: unsupported version");
  std::string text(len, '\0');
  in.read(text.data(), len);
  const auto manifest = nlohmann::json::parse(text);
  if (!manifest.contains("count") || !manifest.contains("rig"))
    throw std::runtime_error("load_dataset: not a dataset file: " + path);

  Dataset ds;
  ds.manifest.count = manifest.at("count").get<int>();
  ds.manifest.views = manifest.at("N").get<int>();
  ds.manifest.height = manifest.at("H").get<int>();
  ds.manifest.width = manifest.at("W").get<int>();
  ds.manifest.near = manifest.at("near").get<double>();
  ds.manifest.far = manifest.at("far").get<double>();
  ds.rig = rig_from_json(manifest.at("rig").dump());

  const size_t total = static_cast<size_t>(ds.manifest.count) * ds.manifest.views *
                       ds.manifest.height * ds.manifest.width;
  ds.payload.resize(total);
  in.read(reinterpret_cast<char*>(ds.payload.data()),
          static_cast<std::streamsize>(total * sizeof(float)));
  if (!in) throw std::runtime_error("load_dataset: truncated payload in " + path);
  return ds;
}

DepthMapSet Dataset::sample(int index) const {
  if (index < 0 || index >= manifest.count)
    throw std::invalid_argument("Dataset::sample: index out of range");
  DepthMapSet maps = DepthMapSet::background(rig, manifest.height, manifest.width,
                                             DepthRange{manifest.near, manifest.far});
  const size_t per = static_cast<size_t>(manifest.views) * manifest.height * manifest.width;
  for (size_t i = 0; i < per; ++i)
    maps.values[i] = static_cast<double>(payload[static_cast<size_t>(index) * per + i]);
  return maps;
}

std::vector<DepthMapSet> Dataset::all_samples() const {
  std::vector<DepthMapSet> out;
  out.reserve(manifest.count);
  for (int i = 0; i < manifest.count; ++i) out.push_back(sample(i));
  return out;
}

}  // namespace mvdd
