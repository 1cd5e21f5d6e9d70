#pragma once

#include <span>
#include <vector>

#include "mvdd/geometry.hpp"
#include "mvdd/rng.hpp"

#include <optional>

namespace mvdd {

/// Anything that predicts the noise component of a depth-map state. The
/// trained U-Net implements this; tests substitute analytic oracles.
class EpsilonPredictor {
 public:
  virtual ~EpsilonPredictor() = default;
  virtual DepthMapSet predict_epsilon(const DepthMapSet& x_t, double alpha_bar_t,
                                      std::optional<int> attend_only = {}) = 0;
  // depth-map resolution (H = W) and normalization the predictor was built for
  virtual int resolution() const = 0;
  virtual DepthRange range() const { return DepthRange::standard(); }
};

/// DDPM coefficient tables, 1-indexed by step; index 0 holds the sentinels
/// beta=0, alpha=1, alpha_bar=1 so that alpha_bar[t] = prod_{s<=t}(1-beta[s]).
struct NoiseSchedule {
  int steps = 0;  // T
  double s = 0.0;
  std::vector<double> beta;       // size T+1, beta[0] = 0
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product

  void validate_step(int t) const;
};

// Cosine schedule: alpha_bar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
// beta_t = 1 - f(t)/f(t-1) clipped to 0.999, alpha_bar rebuilt from the
// clipped betas so the product identity holds exactly.
NoiseSchedule cosine_schedule(int steps, double s = 0.008);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, no clipping.
DepthMapSet q_sample(const DepthMapSet& x0, int t, std::span<const double> eps,
                     const NoiseSchedule& schedule);

// (x_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t)
DepthMapSet posterior_mean(const DepthMapSet& x_t, const DepthMapSet& eps_pred, int t,
                           const NoiseSchedule& schedule);

// One ancestral step: posterior mean plus sqrt(beta_t) * noise; the noise is
// forced to zero at t = 1.
DepthMapSet ddpm_step(const DepthMapSet& x_t, const DepthMapSet& eps_pred, int t,
                      const NoiseSchedule& schedule, std::span<const double> noise);

struct SamplerConfig {
  int fusion_window = 20;
  FusionThresholds fusion;
  int min_views = 2;
  uint64_t seed = 0;
};

// Mean squared epsilon-prediction error over the batch; t drawn uniformly in
// [1, T] per item from `rng`, then the noise.
double training_loss(EpsilonPredictor& denoiser, std::span<const DepthMapSet> batch,
                     const NoiseSchedule& schedule, Rng& rng);

struct SampleResult {
  DepthMapSet maps;
  VisibilityMask mask;
};

// Ancestral sampling from pure noise; within the last fusion_window steps the
// denormalized posterior mean is depth-averaged before noise is added, and
// the final output is clipped with a depth_filter mask attached.
SampleResult sample_unconditional(EpsilonPredictor& denoiser, const CameraRig& rig,
                                  const NoiseSchedule& schedule, const SamplerConfig& config);

// Two-pass conditional completion: the input view follows its forward chain,
// the first pass denoises the other views with full cross-view attention and
// sqrt(1 - beta_t)-scaled mean, the second re-denoises them attending only to
// the clean input view. The output carries the input map verbatim.
DepthMapSet sample_completion(EpsilonPredictor& denoiser, std::span<const double> input_view,
                              int view_index, const CameraRig& rig,
                              const NoiseSchedule& schedule, const SamplerConfig& config);

}  // namespace mvdd
