#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvdd/geometry.hpp"
#include "mvdd/nn/tape.hpp"
#include "mvdd/scheduler.hpp"

namespace mvdd {

struct DenoiserConfig {
  int views = 4;
  int resolution = 16;
  int levels = 3;
  int base_channels = 32;
  std::vector<int> channel_multipliers = {1, 2, 4};
  int groups = 8;
  int heads = 2;
  std::vector<int> attention_levels = {1, 2};  // coarsest two by default

  // epipolar attention geometry
  int segment_samples = 10;          // k
  int neighbor_views = 3;            // R
  double segment_half_width = 0.3;   // delta, world units
  double attention_tau = 0.15;       // world units
  DepthRange range = DepthRange::standard();

  int embed_dim() const { return 4 * base_channels; }
  void validate() const;
  std::string to_json() const;
  static DenoiserConfig from_json(const std::string& text);
};

/// Epsilon-prediction U-Net over N-view depth maps: sinusoidal embedding of
/// sqrt(alpha_bar_t) plus a camera-embedding residual condition every
/// residual block through adaptive group normalization; epipolar attention
/// blocks at the configured levels exchange cross-view features guided by
/// the current depth estimate x_t.
class Denoiser : public EpsilonPredictor {
 public:
  Denoiser(DenoiserConfig config, uint64_t init_seed);

  const DenoiserConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // attend_only restricts every other view's attention neighbors to that
  // single view (completion second pass)
  DepthMapSet predict_epsilon(const DepthMapSet& x_t, double alpha_bar_t,
                              std::optional<int> attend_only = {}) override;
  int resolution() const override { return config_.resolution; }
  DepthRange range() const override { return config_.range; }

  // loss on x_t = q_sample(x0, t, eps) against target eps
  double loss_noise(const DepthMapSet& x0, int t, std::span<const double> eps,
                    const NoiseSchedule& schedule, bool backprop);
  // loss against an arbitrary target on a given x_t
  double loss_direct(const DepthMapSet& x_t, double alpha_bar_t,
                     std::span<const double> target, bool backprop);

  // conditioning vector for a single view (time path + camera path)
  std::vector<double> time_camera_embedding(double alpha_bar_t,
                                            std::span<const double> camera_row);

  void save(const std::string& path) const;
  static Denoiser load(const std::string& path);

 private:
  struct LinearIds {
    int w = -1, b = -1;
  };
  struct ResBlockIds {
    LinearIds conv1, conv2, cond, skip;
    int in_channels = 0, out_channels = 0;
  };
  struct Layers {
    LinearIds time_mlp1, time_mlp2;
    LinearIds cam_embed, cam_mlp1, cam_mlp2;
    LinearIds stem;
    std::vector<ResBlockIds> down;
    ResBlockIds mid;
    std::vector<ResBlockIds> up;  // indexed by level
    std::vector<LinearIds> attn_down, attn_up;  // indexed by level, unused -> -1
    LinearIds head;
  };

  void register_params(uint64_t init_seed);
  int build_conditioning(nn::Tape& tape, const CameraRig& rig, double alpha_bar_t) const;
  int res_block(nn::Tape& tape, int h, const ResBlockIds& ids, int zs) const;
  // returns the epsilon prediction node
  int forward(nn::Tape& tape, const DepthMapSet& x_t, double alpha_bar_t,
              std::optional<int> attend_only) const;

  DenoiserConfig config_;
  nn::ParamStore params_;
  Layers layers_;
};

struct TrainOptions {
  int epochs = 0;
  uint64_t seed = 0;
  int batch_size = 4;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

// Adam on the epsilon objective; returns the per-epoch mean loss curve.
// Single-threaded, deterministic under a fixed seed, and epoch streams are
// keyed by epoch index so shorter runs are prefixes of longer ones.
std::vector<double> train(Denoiser& denoiser, const std::vector<DepthMapSet>& dataset,
                          const NoiseSchedule& schedule, const TrainOptions& options);

struct GradientCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
};

// Central finite differences of the epsilon loss against the tape gradients
// on a random subset of parameter coordinates.
GradientCheckResult gradient_check(Denoiser& denoiser, const DepthMapSet& x0, int t,
                                   const NoiseSchedule& schedule, int coord_count,
                                   uint64_t seed, double step = 1e-4);

}  // namespace mvdd
