#include "mvdd/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "mvdd/attention.hpp"
#include "mvdd/rng.hpp"

namespace mvdd {

void DenoiserConfig::validate() const {
  if (views < 1) throw std::invalid_argument("denoiser config: views must be >= 1");
  if (levels < 1) throw std::invalid_argument("denoiser config: levels must be >= 1");
  if (static_cast<int>(channel_multipliers.size()) != levels)
    throw std::invalid_argument("denoiser config: multipliers must match levels");
  const int div = 1 << (levels - 1);
  if (resolution % div != 0)
    throw std::invalid_argument("denoiser config: resolution must be divisible by 2^(levels-1)");
  for (int m : channel_multipliers) {
    const int c = base_channels * m;
    if (c % groups != 0)
      throw std::invalid_argument("denoiser config: groups must divide every channel count");
    if (c % heads != 0)
      throw std::invalid_argument("denoiser config: heads must divide every channel count");
  }
  for (int level : attention_levels)
    if (level < 0 || level >= levels)
      throw std::invalid_argument("denoiser config: attention level out of range");
  if (!attention_levels.empty()) {
    if (neighbor_views < 1 || neighbor_views > views - 1)
      throw std::invalid_argument("denoiser config: neighbor views must be in [1, views-1]");
    if (segment_samples < 1)
      throw std::invalid_argument("denoiser config: segment samples must be >= 1");
  }
}

std::string DenoiserConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = "checkpoint";
  j["views"] = views;
  j["resolution"] = resolution;
  j["levels"] = levels;
  j["base_channels"] = base_channels;
  j["channel_multipliers"] = channel_multipliers;
  j["groups"] = groups;
  j["heads"] = heads;
  j["attention_levels"] = attention_levels;
  j["k"] = segment_samples;
  j["R"] = neighbor_views;
  j["delta"] = segment_half_width;
  j["tau"] = attention_tau;
  j["near"] = range.near;
  j["far"] = range.far;
  return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DenoiserConfig c;
  c.views = j.at("views").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.levels = j.at("levels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.groups = j.at("groups").get<int>();
  c.heads = j.at("heads").get<int>();
  c.attention_levels = j.at("attention_levels").get<std::vector<int>>();
  c.segment_samples = j.at("k").get<int>();
  c.neighbor_views = j.at("R").get<int>();
  c.segment_half_width = j.at("delta").get<double>();
  c.attention_tau = j.at("tau").get<double>();
  c.range.near = j.at("near").get<double>();
  c.range.far = j.at("far").get<double>();
  c.validate();
  return c;
}

namespace {

bool has_attention(const DenoiserConfig& config, int level) {
  return std::find(config.attention_levels.begin(), config.attention_levels.end(), level) !=
         config.attention_levels.end();
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig config, uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  register_params(init_seed);
}

void Denoiser::register_params(uint64_t init_seed) {
  const int e = config_.embed_dim();
  const int pe_dim = e;

  auto lin = [&](const std::string& name, int dout, int din) {
    LinearIds ids;
    ids.w = params_.add(name + ".w", {dout, din});
    ids.b = params_.add(name + ".b", {dout});
    return ids;
  };
  auto conv = [&](const std::string& name, int co, int ci) {
    LinearIds ids;
    ids.w = params_.add(name + ".w", {co, ci, 3, 3});
    ids.b = params_.add(name + ".b", {co});
    return ids;
  };
  auto conv1 = [&](const std::string& name, int co, int ci) {
    LinearIds ids;
    ids.w = params_.add(name + ".w", {co, ci});
    ids.b = params_.add(name + ".b", {co});
    return ids;
  };
  auto res = [&](const std::string& name, int ci, int co) {
    ResBlockIds ids;
    ids.in_channels = ci;
    ids.out_channels = co;
    ids.conv1 = conv(name + ".conv1", co, ci);
    ids.cond = lin(name + ".cond", 2 * co, e);
    ids.conv2 = conv(name + ".conv2", co, co);
    if (ci != co) ids.skip = conv1(name + ".skip", co, ci);
    return ids;
  };

  layers_.time_mlp1 = lin("time.mlp1", e, pe_dim);
  layers_.time_mlp2 = lin("time.mlp2", e, e);
  layers_.cam_embed = lin("cam.embed", e, 16);
  layers_.cam_mlp1 = lin("cam.mlp1", e, e);
  layers_.cam_mlp2 = lin("cam.mlp2", e, e);

  const int c0 = config_.base_channels * config_.channel_multipliers[0];
  layers_.stem = conv("stem", c0, 1);

  layers_.attn_down.assign(config_.levels, LinearIds{});
  layers_.attn_up.assign(config_.levels, LinearIds{});
  layers_.up.resize(config_.levels);

  int prev = c0;
  for (int level = 0; level < config_.levels; ++level) {
    const int c = config_.base_channels * config_.channel_multipliers[level];
    layers_.down.push_back(res("down" + std::to_string(level), prev, c));
    if (has_attention(config_, level)) {
      layers_.attn_down[level] =
          lin("attn_down" + std::to_string(level) + ".fold", c, c + config_.heads);
    }
    prev = c;
  }
  layers_.mid = res("mid", prev, prev);
  for (int level = config_.levels - 1; level >= 0; --level) {
    const int c = config_.base_channels * config_.channel_multipliers[level];
    layers_.up[level] = res("up" + std::to_string(level), prev + c, c);
    if (has_attention(config_, level)) {
      layers_.attn_up[level] =
          lin("attn_up" + std::to_string(level) + ".fold", c, c + config_.heads);
    }
    prev = c;
  }
  layers_.head = conv("head", 1, prev);

  // uniform fan-in init, biases zero, output head zero
  Rng rng = Rng(init_seed).fork(rng_stream::kParamInit);
  for (auto& p : params_.items) {
    const bool is_weight = p.name.size() > 2 && p.name.rfind(".w") == p.name.size() - 2;
    if (!is_weight) continue;
    if (p.name == "head.w") continue;
    size_t fan_in = 1;
    for (size_t d = 1; d < p.shape.size(); ++d) fan_in *= static_cast<size_t>(p.shape[d]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

int Denoiser::build_conditioning(nn::Tape& tape, const CameraRig& rig,
                                 double alpha_bar_t) const {
  const int e = config_.embed_dim();
  std::vector<double> pe(e);
  nn::positional_encoding(std::sqrt(alpha_bar_t), pe);
  const int pe_node = tape.constant({1, e}, pe);
  int t_emb = tape.linear(pe_node, tape.param(layers_.time_mlp1.w), tape.param(layers_.time_mlp1.b));
  t_emb = tape.silu(t_emb);
  t_emb = tape.linear(t_emb, tape.param(layers_.time_mlp2.w), tape.param(layers_.time_mlp2.b));

  const Eigen::MatrixXd rows = flatten_extrinsics(rig);
  std::vector<double> cam_data(static_cast<size_t>(rows.rows()) * 16);
  for (int v = 0; v < rows.rows(); ++v)
    for (int i = 0; i < 16; ++i) cam_data[static_cast<size_t>(v) * 16 + i] = rows(v, i);
  int cam = tape.constant({static_cast<int>(rows.rows()), 16}, cam_data);
  cam = tape.linear(cam, tape.param(layers_.cam_embed.w), tape.param(layers_.cam_embed.b));
  cam = tape.linear(cam, tape.param(layers_.cam_mlp1.w), tape.param(layers_.cam_mlp1.b));
  cam = tape.silu(cam);
  cam = tape.linear(cam, tape.param(layers_.cam_mlp2.w), tape.param(layers_.cam_mlp2.b));

  const int z = tape.broadcast_add(cam, t_emb);
  return tape.silu(z);
}

int Denoiser::res_block(nn::Tape& tape, int h, const ResBlockIds& ids, int zs) const {
  const int c = ids.out_channels;
  int a = tape.conv3x3(h, tape.param(ids.conv1.w), tape.param(ids.conv1.b));
  a = tape.silu(a);
  const int ss = tape.linear(zs, tape.param(ids.cond.w), tape.param(ids.cond.b));
  const int scale = tape.slice_cols(ss, 0, c);
  const int shift = tape.slice_cols(ss, c, c);
  a = tape.group_norm(a, config_.groups);
  a = tape.modulate(a, scale, shift);
  a = tape.conv3x3(a, tape.param(ids.conv2.w), tape.param(ids.conv2.b));
  a = tape.silu(a);
  const int skip = ids.in_channels == ids.out_channels
                       ? h
                       : tape.conv1x1(h, tape.param(ids.skip.w), tape.param(ids.skip.b));
  return tape.add(a, skip);
}

int Denoiser::forward(nn::Tape& tape, const DepthMapSet& x_t, double alpha_bar_t,
                      std::optional<int> attend_only) const {
  if (x_t.views != config_.views || x_t.height != config_.resolution ||
      x_t.width != config_.resolution)
    throw std::invalid_argument("denoiser: input shape does not match configuration");
  if (x_t.rig.size() != config_.views)
    throw std::invalid_argument("denoiser: rig size does not match configuration");
  if (!(alpha_bar_t >= 0.0 && alpha_bar_t <= 1.0))
    throw std::invalid_argument("denoiser: alpha_bar_t must lie in [0, 1]");

  // per-level attention plans from the raw depth estimate x_t
  std::vector<std::shared_ptr<const EpipolarPlan>> plans(config_.levels);
  if (!config_.attention_levels.empty()) {
    DepthMapSet level_maps = x_t;
    level_maps.range = config_.range;
    for (int level = 0; level < config_.levels; ++level) {
      if (level > 0) level_maps = pooled_half(level_maps);
      if (!has_attention(config_, level)) continue;
      if (attend_only) {
        std::vector<int> lists(static_cast<size_t>(config_.views), *attend_only);
        if (*attend_only >= 0 && *attend_only < config_.views) {
          const auto own = nearest_neighbors(level_maps.rig, *attend_only, 1);
          lists[static_cast<size_t>(*attend_only)] = own[0];
        }
        plans[level] = std::make_shared<EpipolarPlan>(
            build_epipolar_plan(level_maps, config_.segment_samples, lists, 1,
                                config_.segment_half_width, config_.attention_tau));
      } else {
        plans[level] = std::make_shared<EpipolarPlan>(
            build_epipolar_plan(level_maps, config_.segment_samples, config_.neighbor_views,
                                config_.segment_half_width, config_.attention_tau));
      }
    }
  }

  const int zs = build_conditioning(tape, x_t.rig, alpha_bar_t);

  const int x = tape.constant({config_.views, 1, x_t.height, x_t.width}, x_t.values);
  int h = tape.conv3x3(x, tape.param(layers_.stem.w), tape.param(layers_.stem.b));

  std::vector<int> skips;
  for (int level = 0; level < config_.levels; ++level) {
    if (level > 0) h = tape.avg_pool2(h);
    h = res_block(tape, h, layers_.down[level], zs);
    if (has_attention(config_, level)) {
      const int attn = tape.epipolar_attention(h, plans[level],
                                               tape.param(layers_.attn_down[level].w),
                                               tape.param(layers_.attn_down[level].b),
                                               config_.heads);
      h = tape.add(h, attn);
    }
    skips.push_back(h);
  }

  h = res_block(tape, h, layers_.mid, zs);

  for (int level = config_.levels - 1; level >= 0; --level) {
    h = tape.concat_channels(h, skips[level]);
    h = res_block(tape, h, layers_.up[level], zs);
    if (has_attention(config_, level)) {
      const int attn = tape.epipolar_attention(h, plans[level],
                                               tape.param(layers_.attn_up[level].w),
                                               tape.param(layers_.attn_up[level].b),
                                               config_.heads);
      h = tape.add(h, attn);
    }
    if (level > 0) h = tape.upsample2(h);
  }

  return tape.conv3x3(h, tape.param(layers_.head.w), tape.param(layers_.head.b));
}

DepthMapSet Denoiser::predict_epsilon(const DepthMapSet& x_t, double alpha_bar_t,
                                      std::optional<int> attend_only) {
  nn::Tape tape(&params_);
  const int out = forward(tape, x_t, alpha_bar_t, attend_only);
  DepthMapSet eps = x_t;
  eps.values = tape.value(out);
  return eps;
}

double Denoiser::loss_noise(const DepthMapSet& x0, int t, std::span<const double> eps,
                            const NoiseSchedule& schedule, bool backprop) {
  const DepthMapSet x_t = q_sample(x0, t, eps, schedule);
  return loss_direct(x_t, schedule.alpha_bar[t], eps, backprop);
}

double Denoiser::loss_direct(const DepthMapSet& x_t, double alpha_bar_t,
                             std::span<const double> target, bool backprop) {
  nn::Tape tape(&params_);
  const int out = forward(tape, x_t, alpha_bar_t, std::nullopt);
  const int loss = tape.mse(out, target);
  const double value = tape.value(loss)[0];
  if (backprop) tape.backward(loss);
  return value;
}

std::vector<double> Denoiser::time_camera_embedding(double alpha_bar_t,
                                                    std::span<const double> camera_row) {
  if (camera_row.size() != 16)
    throw std::invalid_argument("time_camera_embedding: camera row must have 16 entries");
  if (!(alpha_bar_t >= 0.0 && alpha_bar_t <= 1.0))
    throw std::invalid_argument("time_camera_embedding: alpha_bar_t must lie in [0, 1]");
  nn::Tape tape(&params_);
  const int e = config_.embed_dim();
  std::vector<double> pe(e);
  nn::positional_encoding(std::sqrt(alpha_bar_t), pe);
  int t_emb = tape.linear(tape.constant({1, e}, pe), tape.param(layers_.time_mlp1.w),
                          tape.param(layers_.time_mlp1.b));
  t_emb = tape.silu(t_emb);
  t_emb = tape.linear(t_emb, tape.param(layers_.time_mlp2.w), tape.param(layers_.time_mlp2.b));
  int cam = tape.linear(tape.constant({1, 16}, camera_row), tape.param(layers_.cam_embed.w),
                        tape.param(layers_.cam_embed.b));
  cam = tape.linear(cam, tape.param(layers_.cam_mlp1.w), tape.param(layers_.cam_mlp1.b));
  cam = tape.silu(cam);
  cam = tape.linear(cam, tape.param(layers_.cam_mlp2.w), tape.param(layers_.cam_mlp2.b));
  return tape.value(tape.add(t_emb, cam));
}

namespace {

constexpr char kMagic[4] = {'M', 'V', 'D', 'D'};
constexpr uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void Denoiser::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("Denoiser::save: cannot open " + path);
  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);
  const std::string config = config_.to_json();
  write_u32(out, static_cast<uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  for (const auto& p : params_.items) {
    write_u32(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) write_u32(out, static_cast<uint32_t>(d));
    std::vector<float> data(p.value.begin(), p.value.end());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("Denoiser::save: write failed for " + path);
}

Denoiser Denoiser::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("Denoiser::load: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("Denoiser::load: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("Denoiser::load: unsupported version");
  const uint32_t json_len = read_u32(in);
  std::string config_text(json_len, '\0');
  in.read(config_text.data(), json_len);
  const auto doc = nlohmann::json::parse(config_text);
  if (!doc.contains("kind") || doc.at("kind").get<std::string>() != "checkpoint")
    throw std::runtime_error("Denoiser::load: not a checkpoint file: " + path);

  Denoiser model(DenoiserConfig::from_json(config_text), 0);
  std::map<std::string, int> by_name;
  for (int i = 0; i < model.params_.count(); ++i) by_name[model.params_.at(i).name] = i;

  while (true) {
    const uint32_t name_len = read_u32(in);
    if (!in) break;
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rank = read_u32(in);
    std::vector<int> shape(rank);
    size_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(read_u32(in));
      count *= static_cast<size_t>(shape[d]);
    }
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error("Denoiser::load: truncated tensor " + name);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("Denoiser::load: unknown tensor " + name);
    nn::Parameter& p = model.params_.at(it->second);
    if (p.shape != shape) throw std::runtime_error("Denoiser::load: shape mismatch for " + name);
    for (size_t i = 0; i < count; ++i) p.value[i] = static_cast<double>(data[i]);
  }
  return model;
}

std::vector<double> train(Denoiser& denoiser, const std::vector<DepthMapSet>& dataset,
                          const NoiseSchedule& schedule, const TrainOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  const int count = static_cast<int>(dataset.size());
  const size_t elems = dataset[0].values.size();

  nn::AdamOptimizer adam;
  adam.learning_rate = options.learning_rate;
  adam.beta1 = options.beta1;
  adam.beta2 = options.beta2;

  const Rng base(options.seed);
  std::vector<double> curve;
  curve.reserve(options.epochs);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = base.fork(rng_stream::kTrainShuffle).fork(epoch);
    for (int i = count - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.uniform_int(0, i)]);

    double epoch_loss = 0.0;
    int position = 0;
    while (position < count) {
      const int batch = std::min(options.batch_size, count - position);
      denoiser.params().zero_grad();
      for (int j = 0; j < batch; ++j, ++position) {
        Rng item_rng = base.fork(rng_stream::kTrainStep).fork(epoch).fork(position);
        const int t = item_rng.uniform_int(1, schedule.steps);
        std::vector<double> eps(elems);
        for (double& v : eps) v = item_rng.gaussian();
        epoch_loss += denoiser.loss_noise(dataset[order[position]], t, eps, schedule, true);
      }
      denoiser.params().scale_grad(1.0 / batch);
      adam.step(denoiser.params());
    }
    curve.push_back(epoch_loss / count);
  }
  return curve;
}

GradientCheckResult gradient_check(Denoiser& denoiser, const DepthMapSet& x0, int t,
                                   const NoiseSchedule& schedule, int coord_count,
                                   uint64_t seed, double step) {
  Rng rng(seed);
  std::vector<double> eps(x0.values.size());
  for (double& v : eps) v = rng.gaussian();

  denoiser.params().zero_grad();
  denoiser.loss_noise(x0, t, eps, schedule, true);

  nn::ParamStore& params = denoiser.params();
  std::vector<std::pair<int, size_t>> coords;
  std::set<std::pair<int, size_t>> seen;
  Rng pick = rng.fork(1);
  while (static_cast<int>(coords.size()) < coord_count) {
    const int pi = pick.uniform_int(0, params.count() - 1);
    const size_t ci = static_cast<size_t>(pick.uniform_int(
        0, static_cast<int>(params.at(pi).size()) - 1));
    if (seen.insert({pi, ci}).second) coords.emplace_back(pi, ci);
  }

  GradientCheckResult result;
  result.coords_checked = coord_count;
  for (const auto& [pi, ci] : coords) {
    nn::Parameter& p = params.at(pi);
    const double saved = p.value[ci];
    const double analytic = p.grad[ci];
    p.value[ci] = saved + step;
    const double plus = denoiser.loss_noise(x0, t, eps, schedule, false);
    p.value[ci] = saved - step;
    const double minus = denoiser.loss_noise(x0, t, eps, schedule, false);
    p.value[ci] = saved;
    const double fd = (plus - minus) / (2.0 * step);
    const double rel =
        std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-6});
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

}  // namespace mvdd
