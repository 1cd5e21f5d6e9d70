// Command-line front end: data generation, training, sampling, completion,
// fusion/export, and point-cloud evaluation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvdd/camera.hpp"
#include "mvdd/dataset.hpp"
#include "mvdd/denoiser.hpp"
#include "mvdd/geometry.hpp"
#include "mvdd/io.hpp"
#include "mvdd/metrics.hpp"
#include "mvdd/parallel.hpp"
#include "mvdd/scheduler.hpp"

namespace {

namespace fs = std::filesystem;
using namespace mvdd;

// exit codes: 0 success, 2 usage, 3 data/config mismatch, 4 IO
struct MismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int T = 100;
  double s = 0.008;
  int fusion_window = 20;
  double psi_max = 1.0;
  double epsilon_rel = 0.01;
  double tau = 0.15;
  int k = 10;
  int R = 3;
  double delta = 0.3;
  uint64_t seed = 0;
  int min_views = 2;
  int threads = 1;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["T"] = T;
    j["s"] = s;
    j["fusion_window"] = fusion_window;
    j["psi_max"] = psi_max;
    j["epsilon_rel"] = epsilon_rel;
    j["tau"] = tau;
    j["k"] = k;
    j["R"] = R;
    j["delta"] = delta;
    j["seed"] = seed;
    j["min_views"] = min_views;
    j["threads"] = threads;
    return j;
  }

  void apply_file(const nlohmann::json& j) {
    if (j.contains("T")) T = j.at("T").get<int>();
    if (j.contains("s")) s = j.at("s").get<double>();
    if (j.contains("fusion_window")) fusion_window = j.at("fusion_window").get<int>();
    if (j.contains("psi_max")) psi_max = j.at("psi_max").get<double>();
    if (j.contains("epsilon_rel")) epsilon_rel = j.at("epsilon_rel").get<double>();
    if (j.contains("tau")) tau = j.at("tau").get<double>();
    if (j.contains("k")) k = j.at("k").get<int>();
    if (j.contains("R")) R = j.at("R").get<int>();
    if (j.contains("delta")) delta = j.at("delta").get<double>();
    if (j.contains("seed")) seed = j.at("seed").get<uint64_t>();
    if (j.contains("min_views")) min_views = j.at("min_views").get<int>();
    if (j.contains("threads")) threads = j.at("threads").get<int>();
  }

  SamplerConfig sampler() const {
    SamplerConfig c;
    c.fusion_window = fusion_window;
    c.fusion.psi_max = psi_max;
    c.fusion.epsilon_rel = epsilon_rel;
    c.min_views = min_views;
    c.seed = seed;
    return c;
  }
};

void write_sidecar(const std::string& out_path, const RunConfig& config,
                   const nlohmann::json& extra) {
  nlohmann::json j = config.to_json();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream out(out_path + ".config.json");
  if (!out) throw IoError("cannot write sidecar for " + out_path);
  out << j.dump(2) << "\n";
}

std::vector<ShapeKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<ShapeKind> kinds;
  for (const auto& n : names) {
    if (n == "sphere") kinds.push_back(ShapeKind::kSphere);
    else if (n == "box") kinds.push_back(ShapeKind::kBox);
    else if (n == "cylinder") kinds.push_back(ShapeKind::kCylinder);
    else if (n == "union") kinds.push_back(ShapeKind::kUnionOfTwo);
    else throw std::invalid_argument("unknown shape kind: " + n);
  }
  return kinds;
}

CameraRig resolve_rig(const std::string& rig_file, const std::vector<double>& first_center,
                      int views, int resolution) {
  if (!rig_file.empty()) return load_rig(rig_file);
  const Intrinsics intr = Intrinsics::centered(resolution, resolution);
  if (!first_center.empty()) {
    if (first_center.size() != 3)
      throw std::invalid_argument("--first-center expects three values");
    if (views != 8) throw MismatchError("dynamic rig always has 8 views");
    return dynamic_cube_rig(Eigen::Vector3d(first_center[0], first_center[1], first_center[2]),
                            intr)
        .rig;
  }
  return fixed_cuboid_rig(intr, views);
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(int count, int views, int res, const RunConfig& config,
                 const std::string& out, const std::vector<std::string>& kind_names,
                 const std::string& rig_file, const std::vector<double>& first_center) {
  const CameraRig rig = resolve_rig(rig_file, first_center, views, res);
  const auto kinds = parse_kinds(kind_names);
  try {
    build_dataset(count, rig, config.seed, out, kinds);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  write_sidecar(out, config, {{"command", "gen-data"}, {"count", count}, {"views", views},
                              {"res", res}});
  const Dataset ds = load_dataset(out);
  std::cout << "wrote " << out << ": " << ds.manifest.count << " samples, " << ds.manifest.views
            << " views, " << ds.manifest.height << "x" << ds.manifest.width << "\n";
  return 0;
}

DenoiserConfig denoiser_config_for(const Dataset& ds, const RunConfig& config, int levels,
                                   int base, std::vector<int> mults, int groups, int heads,
                                   std::vector<int> attn_levels) {
  DenoiserConfig dc;
  dc.views = ds.manifest.views;
  dc.resolution = ds.manifest.height;
  if (ds.manifest.height != ds.manifest.width)
    throw MismatchError("denoiser requires square depth maps");
  dc.levels = levels;
  dc.base_channels = base;
  dc.channel_multipliers = std::move(mults);
  dc.groups = groups;
  dc.heads = heads;
  dc.attention_levels = std::move(attn_levels);
  dc.segment_samples = config.k;
  dc.neighbor_views = std::min(config.R, dc.views - 1);
  dc.segment_half_width = config.delta;
  dc.attention_tau = config.tau;
  dc.range = DepthRange{ds.manifest.near, ds.manifest.far};
  try {
    dc.validate();
  } catch (const std::invalid_argument& e) {
    throw MismatchError(e.what());
  }
  return dc;
}

int cmd_train(const std::string& data_path, int epochs, int batch, const RunConfig& config,
              const std::string& out, int levels, int base, std::vector<int> mults, int groups,
              int heads, std::vector<int> attn_levels, int expect_res, int expect_views) {
  Dataset ds;
  try {
    ds = load_dataset(data_path);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  if (expect_res > 0 && expect_res != ds.manifest.height)
    throw MismatchError("--res does not match dataset resolution");
  if (expect_views > 0 && expect_views != ds.manifest.views)
    throw MismatchError("--views does not match dataset view count");

  const DenoiserConfig dc = denoiser_config_for(ds, config, levels, base, std::move(mults),
                                                groups, heads, std::move(attn_levels));
  Denoiser model(dc, config.seed);

  TrainOptions options;
  options.epochs = epochs;
  options.seed = config.seed;
  options.batch_size = batch;
  const NoiseSchedule schedule = cosine_schedule(config.T, config.s);
  const auto curve = train(model, ds.all_samples(), schedule, options);

  model.save(out);
  std::ofstream csv(out + ".loss.csv");
  if (!csv) throw IoError("cannot write loss curve for " + out);
  csv << "epoch,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof(line), "%zu,%.12g\n", i + 1, curve[i]);
    csv << line;
  }
  write_sidecar(out, config, {{"command", "train"}, {"epochs", epochs}, {"batch", batch},
                              {"data", data_path}});
  std::cout << "wrote " << out << " (" << model.params().total_size() << " parameters, "
            << curve.size() << " epochs)\n";
  if (!curve.empty())
    std::cout << "loss: first " << curve.front() << ", last " << curve.back() << "\n";
  return 0;
}

Denoiser load_checkpoint(const std::string& path) {
  try {
    return Denoiser::load(path);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
}

int cmd_sample(const std::string& ckpt, const RunConfig& config, const std::string& out,
               const std::string& ply_path, const std::string& rig_file,
               const std::vector<double>& first_center) {
  Denoiser model = load_checkpoint(ckpt);
  CameraRig rig = resolve_rig(rig_file, first_center, model.config().views,
                              model.config().resolution);
  if (rig.size() != model.config().views)
    throw MismatchError("rig view count does not match checkpoint");
  if (rig.cameras[0].intrinsics.height != model.config().resolution)
    throw MismatchError("rig resolution does not match checkpoint");

  const NoiseSchedule schedule = cosine_schedule(config.T, config.s);
  const SampleResult result = sample_unconditional(model, rig, schedule, config.sampler());
  save_depth_container(out, std::span<const DepthMapSet>(&result.maps, 1));
  write_sidecar(out, config, {{"command", "sample"}, {"ckpt", ckpt}});
  std::cout << "wrote " << out << "\n";
  if (!ply_path.empty()) {
    const PointCloud cloud = fuse_to_pointcloud(result.maps, result.mask);
    write_ply(ply_path, cloud);
    std::cout << "wrote " << ply_path << " (" << cloud.size() << " points)\n";
  }
  return 0;
}

int cmd_complete(const std::string& ckpt, const std::string& input, int view, int sample_index,
                 const RunConfig& config, const std::string& out, const std::string& rig_file,
                 const std::vector<double>& first_center) {
  Denoiser model = load_checkpoint(ckpt);
  const DenoiserConfig& dc = model.config();
  if (view < 0 || view >= dc.views) throw std::invalid_argument("--view out of range");

  CameraRig rig = resolve_rig(rig_file, first_center, dc.views, dc.resolution);
  if (rig.size() != dc.views) throw MismatchError("rig view count does not match checkpoint");

  std::vector<double> input_view;
  if (input.size() > 4 && input.substr(input.size() - 4) == ".pfm") {
    io::PfmImage img;
    try {
      img = io::read_pfm(input);
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    if (img.width != dc.resolution || img.height != dc.resolution)
      throw MismatchError("input view resolution does not match checkpoint");
    input_view.resize(img.values.size());
    for (size_t i = 0; i < img.values.size(); ++i)
      input_view[i] = std::clamp(dc.range.normalize(img.values[i]), -1.0, 1.0);
  } else {
    Dataset ds;
    try {
      ds = load_dataset(input);
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    if (ds.manifest.height != dc.resolution || ds.manifest.views != dc.views)
      throw MismatchError("input container does not match checkpoint");
    const DepthMapSet maps = ds.sample(sample_index);
    const auto v = maps.view(view);
    input_view.assign(v.begin(), v.end());
  }

  const NoiseSchedule schedule = cosine_schedule(config.T, config.s);
  const DepthMapSet completed =
      sample_completion(model, input_view, view, rig, schedule, config.sampler());
  save_depth_container(out, std::span<const DepthMapSet>(&completed, 1));
  write_sidecar(out, config, {{"command", "complete"}, {"ckpt", ckpt}, {"view", view}});
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_fuse(const std::string& input, int sample_index, const RunConfig& config,
             const std::string& out, bool filtered) {
  Dataset ds;
  try {
    ds = load_dataset(input);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  const DepthMapSet maps = ds.sample(sample_index);
  FusionThresholds thresholds{config.psi_max, config.epsilon_rel};
  const VisibilityMask mask =
      filtered ? depth_filter(maps, thresholds, config.min_views)
               : VisibilityMask::filled(maps.views, maps.height, maps.width, true);
  const PointCloud cloud = fuse_to_pointcloud(maps, mask);
  write_ply(out, cloud);
  std::cout << "wrote " << out << " (" << cloud.size() << " points)\n";
  return 0;
}

std::vector<PointCloud> load_cloud_set(const std::string& path, const RunConfig& config) {
  std::vector<PointCloud> clouds;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".ply") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) clouds.push_back(read_ply(f));
  } else if (path.size() > 4 && path.substr(path.size() - 4) == ".ply") {
    clouds.push_back(read_ply(path));
  } else {
    const Dataset ds = load_dataset(path);
    FusionThresholds thresholds{config.psi_max, config.epsilon_rel};
    for (int i = 0; i < ds.count(); ++i) {
      const DepthMapSet maps = ds.sample(i);
      const VisibilityMask mask = depth_filter(maps, thresholds, config.min_views);
      clouds.push_back(fuse_to_pointcloud(maps, mask));
    }
  }
  if (clouds.empty()) throw IoError("no clouds found in " + path);
  return clouds;
}

// independent brute-force metric implementations for --oracle
namespace oracle {

double chamfer(const PointCloud& a, const PointCloud& b) {
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

double emd(const PointCloud& a, const PointCloud& b) {
  const int n = a.size();
  if (n > 8) throw std::invalid_argument("--oracle EMD supports at most 8 points per cloud");
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

double distance(const PointCloud& a, const PointCloud& b, metrics::Distance d) {
  return d == metrics::Distance::kChamfer ? chamfer(a, b) : emd(a, b);
}

metrics::SetMetrics evaluate(const std::vector<PointCloud>& gen,
                             const std::vector<PointCloud>& ref, metrics::Distance d) {
  metrics::SetMetrics m;
  std::vector<char> matched(ref.size(), 0);
  double mmd_total = 0.0;
  for (size_t j = 0; j < ref.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < gen.size(); ++i)
      best = std::min(best, distance(gen[i], ref[j], d));
    mmd_total += best;
  }
  m.mmd = mmd_total / static_cast<double>(ref.size());
  for (size_t i = 0; i < gen.size(); ++i) {
    size_t arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < ref.size(); ++j) {
      const double dist = distance(gen[i], ref[j], d);
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    matched[arg] = 1;
  }
  m.coverage = static_cast<double>(std::count(matched.begin(), matched.end(), 1)) /
               static_cast<double>(ref.size());
  const size_t g = gen.size(), total = gen.size() + ref.size();
  size_t correct = 0;
  auto at = [&](size_t i) -> const PointCloud& { return i < g ? gen[i] : ref[i - g]; };
  for (size_t i = 0; i < total; ++i) {
    size_t best = total;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < total; ++j) {
      if (j == i) continue;
      const double dist = distance(at(i), at(j), d);
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    if ((i < g) == (best < g)) ++correct;
  }
  m.one_nna = static_cast<double>(correct) / static_cast<double>(total);
  return m;
}

}  // namespace oracle

int cmd_eval(const std::string& gen_path, const std::string& ref_path,
             std::vector<std::string> metric_names, int subsample_count, bool use_oracle,
             const RunConfig& config, const std::string& out) {
  std::vector<PointCloud> gen = load_cloud_set(gen_path, config);
  std::vector<PointCloud> ref = load_cloud_set(ref_path, config);

  if (subsample_count > 0) {
    for (size_t i = 0; i < gen.size(); ++i)
      gen[i] = metrics::subsample(gen[i], std::min(subsample_count, gen[i].size()),
                                  Rng(config.seed).fork(i).next_u64());
    for (size_t i = 0; i < ref.size(); ++i)
      ref[i] = metrics::subsample(ref[i], std::min(subsample_count, ref[i].size()),
                                  Rng(config.seed).fork(1000 + i).next_u64());
  }

  if (metric_names.empty()) metric_names = {"cd", "emd"};
  nlohmann::json report;
  for (const auto& name : metric_names) {
    metrics::Distance distance;
    if (name == "cd") distance = metrics::Distance::kChamfer;
    else if (name == "emd") distance = metrics::Distance::kEmd;
    else throw std::invalid_argument("unknown metric: " + name);

    if (distance == metrics::Distance::kEmd) {
      for (const auto& c : gen)
        if (c.size() != gen[0].size()) throw MismatchError("EMD requires equal point counts; use --subsample");
      for (const auto& c : ref)
        if (c.size() != gen[0].size()) throw MismatchError("EMD requires equal point counts; use --subsample");
    }

    const metrics::SetMetrics m = metrics::evaluate_set(gen, ref, distance);
    report[name] = {{"mmd", m.mmd}, {"coverage", m.coverage}, {"one_nna", m.one_nna}};
    if (use_oracle) {
      const metrics::SetMetrics o = oracle::evaluate(gen, ref, distance);
      const double diff = std::max({std::abs(m.mmd - o.mmd), std::abs(m.coverage - o.coverage),
                                    std::abs(m.one_nna - o.one_nna)});
      report[name]["oracle_max_abs_diff"] = diff;
    }
    std::printf("%-5s  mmd %.6g  cov %.4f  1-nna %.4f\n", name.c_str(), m.mmd, m.coverage,
                m.one_nna);
  }

  if (!out.empty()) {
    std::ofstream o(out);
    if (!o) throw IoError("cannot write report " + out);
    o << report.dump(2) << "\n";
  } else {
    std::cout << report.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view depth diffusion toolkit"};
  app.require_subcommand(1);

  RunConfig config;
  std::string config_file;
  app.add_option("--config", config_file, "JSON run-config file")->expected(1);

  // shared run-config flags, registered per subcommand so they appear in help
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", config.seed, "RNG seed");
    sub->add_option("--threads", config.threads, "worker threads for parallel loops");
    sub->add_option("--T", config.T, "diffusion steps");
    sub->add_option("--s", config.s, "cosine schedule offset");
    sub->add_option("--fusion-window", config.fusion_window, "depth fusion window");
    sub->add_option("--psi", config.psi_max, "fusion pixel threshold");
    sub->add_option("--eps-rel", config.epsilon_rel, "fusion relative depth threshold");
    sub->add_option("--tau", config.tau, "attention visibility threshold");
    sub->add_option("--k", config.k, "epipolar segment samples");
    sub->add_option("--R", config.R, "attention neighbor views");
    sub->add_option("--delta", config.delta, "epipolar segment half width");
    sub->add_option("--min-views", config.min_views, "depth filter support count");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic depth dataset");
  int gd_count = 64, gd_views = 4, gd_res = 16;
  std::string gd_out;
  std::vector<std::string> gd_kinds;
  std::string rig_file;
  std::vector<double> first_center;
  gen->add_option("--count", gd_count, "number of shapes");
  gen->add_option("--views", gd_views, "views per rig");
  gen->add_option("--res", gd_res, "depth map resolution");
  gen->add_option("--out", gd_out, "output dataset path")->required();
  gen->add_option("--kinds", gd_kinds, "shape kinds (sphere box cylinder union)");
  gen->add_option("--rig-file", rig_file, "rig JSON file");
  gen->add_option("--first-center", first_center, "dynamic rig first camera center")->expected(3);
  add_common(gen);

  // train
  auto* tr = app.add_subcommand("train", "train the denoiser");
  std::string tr_data, tr_out;
  int tr_epochs = 30, tr_batch = 4;
  int tr_levels = 3, tr_base = 32, tr_groups = 8, tr_heads = 2;
  int tr_res = 0, tr_views = 0;
  std::vector<int> tr_mults = {1, 2, 4};
  std::vector<int> tr_attn = {1, 2};
  tr->add_option("--data", tr_data, "dataset path")->required();
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--levels", tr_levels, "U-Net levels");
  tr->add_option("--base", tr_base, "base channels");
  tr->add_option("--mults", tr_mults, "channel multipliers");
  tr->add_option("--groups", tr_groups, "group-norm groups");
  tr->add_option("--heads", tr_heads, "attention heads");
  tr->add_option("--attn-levels", tr_attn, "attention level indices");
  tr->add_option("--res", tr_res, "expected dataset resolution");
  tr->add_option("--views", tr_views, "expected dataset view count");
  add_common(tr);

  // sample
  auto* sm = app.add_subcommand("sample", "unconditional generation");
  std::string sm_ckpt, sm_out, sm_ply;
  sm->add_option("--ckpt", sm_ckpt, "checkpoint path")->required();
  sm->add_option("--out", sm_out, "output depth container")->required();
  sm->add_option("--ply", sm_ply, "also fuse and export a point cloud");
  sm->add_option("--rig-file", rig_file, "rig JSON file");
  sm->add_option("--first-center", first_center, "dynamic rig first camera center")->expected(3);
  add_common(sm);

  // complete
  auto* cp = app.add_subcommand("complete", "depth completion from one view");
  std::string cp_ckpt, cp_input, cp_out;
  int cp_view = 0, cp_sample = 0;
  cp->add_option("--ckpt", cp_ckpt, "checkpoint path")->required();
  cp->add_option("--input", cp_input, "input view (.pfm, world units) or container")->required();
  cp->add_option("--view", cp_view, "rig index of the input view")->required();
  cp->add_option("--sample", cp_sample, "sample index when input is a container");
  cp->add_option("--out", cp_out, "output depth container")->required();
  cp->add_option("--rig-file", rig_file, "rig JSON file");
  cp->add_option("--first-center", first_center, "dynamic rig first camera center")->expected(3);
  add_common(cp);

  // fuse / export-ply
  auto* fu = app.add_subcommand("fuse", "filtered fusion of a depth container to PLY");
  std::string fu_input, fu_out;
  int fu_sample = 0;
  fu->add_option("--input", fu_input, "depth container")->required();
  fu->add_option("--sample", fu_sample, "sample index");
  fu->add_option("--out", fu_out, "output PLY")->required();
  add_common(fu);

  auto* ex = app.add_subcommand("export-ply", "back-project a depth container to PLY");
  std::string ex_input, ex_out;
  int ex_sample = 0;
  ex->add_option("--input", ex_input, "depth container")->required();
  ex->add_option("--sample", ex_sample, "sample index");
  ex->add_option("--out", ex_out, "output PLY")->required();
  add_common(ex);

  // eval
  auto* ev = app.add_subcommand("eval", "point-cloud set metrics");
  std::string ev_gen, ev_ref, ev_out;
  std::vector<std::string> ev_metrics;
  int ev_subsample = 0;
  bool ev_oracle = false;
  ev->add_option("--gen", ev_gen, "generated set (dir of .ply or container)")->required();
  ev->add_option("--ref", ev_ref, "reference set (dir of .ply or container)")->required();
  ev->add_option("--metric", ev_metrics, "cd and/or emd");
  ev->add_option("--subsample", ev_subsample, "subsample clouds to this many points");
  ev->add_flag("--oracle", ev_oracle, "cross-check against brute-force oracles");
  ev->add_option("--out", ev_out, "JSON report path");
  add_common(ev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw IoError("cannot open config file " + config_file);
      nlohmann::json file_json = nlohmann::json::parse(in);
      // flags win over the file: reparse by applying the file first, then
      // overriding with any flag that was actually passed
      RunConfig merged;
      merged.apply_file(file_json);
      CLI::App* active = app.get_subcommands().front();
      auto keep = [&](const std::string& flag, auto member) {
        if (active->count(flag) == 0) config.*member = merged.*member;
      };
      keep("--seed", &RunConfig::seed);
      keep("--threads", &RunConfig::threads);
      keep("--T", &RunConfig::T);
      keep("--s", &RunConfig::s);
      keep("--fusion-window", &RunConfig::fusion_window);
      keep("--psi", &RunConfig::psi_max);
      keep("--eps-rel", &RunConfig::epsilon_rel);
      keep("--tau", &RunConfig::tau);
      keep("--k", &RunConfig::k);
      keep("--R", &RunConfig::R);
      keep("--delta", &RunConfig::delta);
      keep("--min-views", &RunConfig::min_views);
    }
    set_thread_count(config.threads);

    if (gen->parsed())
      return cmd_gen_data(gd_count, gd_views, gd_res, config, gd_out, gd_kinds, rig_file,
                          first_center);
    if (tr->parsed())
      return cmd_train(tr_data, tr_epochs, tr_batch, config, tr_out, tr_levels, tr_base,
                       tr_mults, tr_groups, tr_heads, tr_attn, tr_res, tr_views);
    if (sm->parsed()) return cmd_sample(sm_ckpt, config, sm_out, sm_ply, rig_file, first_center);
    if (cp->parsed())
      return cmd_complete(cp_ckpt, cp_input, cp_view, cp_sample, config, cp_out, rig_file,
                          first_center);
    if (fu->parsed()) return cmd_fuse(fu_input, fu_sample, config, fu_out, true);
    if (ex->parsed()) return cmd_fuse(ex_input, ex_sample, config, ex_out, false);
    if (ev->parsed())
      return cmd_eval(ev_gen, ev_ref, ev_metrics, ev_subsample, ev_oracle, config, ev_out);
  } catch (const MismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
