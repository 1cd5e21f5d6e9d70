#include "mvdd/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>



namespace mvdd {

void NoiseSchedule::validate_step(int t) const {
  if (t < 1 || t > steps) throw std::invalid_argument("schedule: step out of range");
}

NoiseSchedule cosine_schedule(int steps, double s) {
  if (steps < 1) throw std::invalid_argument("cosine_schedule: steps must be >= 1");
  if (!(s > 0.0)) throw std::invalid_argument("cosine_schedule: s must be positive");

  auto f = [&](double t) {
    const double c = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
    return c * c;
  };

  NoiseSchedule sched;
  sched.steps = steps;
  sched.s = s;
  sched.beta.assign(steps + 1, 0.0);
  sched.alpha.assign(steps + 1, 1.0);
  sched.alpha_bar.assign(steps + 1, 1.0);
  const double f0 = f(0.0);
  for (int t = 1; t <= steps; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
    sched.beta[t] = beta;
    sched.alpha[t] = 1.0 - beta;
    sched.alpha_bar[t] = sched.alpha_bar[t - 1] * sched.alpha[t];
  }
  (void)f0;
  return sched;
}

DepthMapSet q_sample(const DepthMapSet& x0, int t, std::span<const double> eps,
                     const NoiseSchedule& schedule) {
  schedule.validate_step(t);
  if (eps.size() != x0.values.size())
    throw std::invalid_argument("q_sample: noise size mismatch");
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  DepthMapSet x_t = x0;
  for (size_t i = 0; i < x_t.values.size(); ++i) x_t.values[i] = a * x0.values[i] + b * eps[i];
  return x_t;
}

DepthMapSet posterior_mean(const DepthMapSet& x_t, const DepthMapSet& eps_pred, int t,
                           const NoiseSchedule& schedule) {
  schedule.validate_step(t);
  if (eps_pred.values.size() != x_t.values.size())
    throw std::invalid_argument("posterior_mean: shape mismatch");
  const double coeff = (1.0 - schedule.alpha[t]) / std::sqrt(1.0 - schedule.alpha_bar[t]);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
  DepthMapSet mean = x_t;
  for (size_t i = 0; i < mean.values.size(); ++i)
    mean.values[i] = (x_t.values[i] - coeff * eps_pred.values[i]) * inv_sqrt_alpha;
  return mean;
}

DepthMapSet ddpm_step(const DepthMapSet& x_t, const DepthMapSet& eps_pred, int t,
                      const NoiseSchedule& schedule, std::span<const double> noise) {
  DepthMapSet out = posterior_mean(x_t, eps_pred, t, schedule);
  if (t > 1) {
    if (noise.size() != out.values.size())
      throw std::invalid_argument("ddpm_step: noise size mismatch");
    const double sigma = std::sqrt(schedule.beta[t]);
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += sigma * noise[i];
  }
  return out;
}

double training_loss(EpsilonPredictor& denoiser, std::span<const DepthMapSet> batch,
                     const NoiseSchedule& schedule, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
  double total = 0.0;
  for (const DepthMapSet& x0 : batch) {
    const int t = rng.uniform_int(1, schedule.steps);
    std::vector<double> eps(x0.values.size());
    for (double& v : eps) v = rng.gaussian();
    const DepthMapSet x_t = q_sample(x0, t, eps, schedule);
    const DepthMapSet pred = denoiser.predict_epsilon(x_t, schedule.alpha_bar[t]);
    double item = 0.0;
    for (size_t i = 0; i < eps.size(); ++i) {
      const double d = pred.values[i] - eps[i];
      item += d * d;
    }
    total += item / static_cast<double>(eps.size());
  }
  return total / static_cast<double>(batch.size());
}

namespace {

void fill_gaussian(Rng rng, std::span<double> out) {
  for (double& v : out) v = rng.gaussian();
}

}  // namespace

SampleResult sample_unconditional(EpsilonPredictor& denoiser, const CameraRig& rig,
                                  const NoiseSchedule& schedule, const SamplerConfig& config) {
  const int res = denoiser.resolution();
  const Rng base(config.seed);
  DepthMapSet x = DepthMapSet::background(rig, res, res, denoiser.range());
  for (int v = 0; v < x.views; ++v)
    fill_gaussian(base.fork(rng_stream::kInit).fork(v), x.view(v));

  for (int t = schedule.steps; t >= 1; --t) {
    const DepthMapSet eps = denoiser.predict_epsilon(x, schedule.alpha_bar[t]);
    DepthMapSet mean = posterior_mean(x, eps, t, schedule);
    if (config.fusion_window > 0 && t <= config.fusion_window)
      mean = depth_average(mean, config.fusion);
    if (t > 1) {
      const double sigma = std::sqrt(schedule.beta[t]);
      for (int v = 0; v < x.views; ++v) {
        Rng stream = base.fork(rng_stream::kStep).fork(v).fork(static_cast<uint64_t>(t));
        auto view = mean.view(v);
        for (double& value : view) value += sigma * stream.gaussian();
      }
    }
    x = std::move(mean);
  }

  x.clip();
  SampleResult result{std::move(x), {}};
  result.mask = depth_filter(result.maps, config.fusion, config.min_views);
  return result;
}

DepthMapSet sample_completion(EpsilonPredictor& denoiser, std::span<const double> input_view,
                              int view_index, const CameraRig& rig,
                              const NoiseSchedule& schedule, const SamplerConfig& config) {
  const int res = denoiser.resolution();
  if (view_index < 0 || view_index >= rig.size())
    throw std::invalid_argument("sample_completion: view index out of range");
  const size_t view_elems = static_cast<size_t>(res) * res;
  if (input_view.size() != view_elems)
    throw std::invalid_argument("sample_completion: input view resolution mismatch");

  const Rng base(config.seed);
  DepthMapSet state = DepthMapSet::background(rig, res, res, denoiser.range());

  // x_T: other views from pure noise, input view from its forward chain
  for (int v = 0; v < state.views; ++v)
    if (v != view_index) fill_gaussian(base.fork(rng_stream::kInit).fork(v), state.view(v));
  {
    Rng stream = base.fork(rng_stream::kInputChain).fork(static_cast<uint64_t>(schedule.steps));
    const double a = std::sqrt(schedule.alpha_bar[schedule.steps]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[schedule.steps]);
    auto slot = state.view(view_index);
    for (size_t i = 0; i < view_elems; ++i) slot[i] = a * input_view[i] + b * stream.gaussian();
  }

  for (int t = schedule.steps; t >= 1; --t) {
    const double sigma = std::sqrt(schedule.beta[t]);
    const double scale_back = std::sqrt(1.0 - schedule.beta[t]);

    // first pass: full cross-view attention, sqrt(1 - beta_t)-scaled mean
    const DepthMapSet eps1 = denoiser.predict_epsilon(state, schedule.alpha_bar[t]);
    const DepthMapSet mean1 = posterior_mean(state, eps1, t, schedule);
    DepthMapSet intermediate = state;
    for (int v = 0; v < state.views; ++v) {
      if (v == view_index) continue;
      Rng stream = base.fork(rng_stream::kPassOne).fork(v).fork(static_cast<uint64_t>(t));
      auto dst = intermediate.view(v);
      const auto mu = mean1.view(v);
      for (size_t i = 0; i < view_elems; ++i) {
        const double z = t > 1 ? stream.gaussian() : 0.0;
        dst[i] = scale_back * mu[i] + sigma * z;
      }
    }
    // the second pass sees the clean input view
    {
      auto slot = intermediate.view(view_index);
      std::copy(input_view.begin(), input_view.end(), slot.begin());
    }

    // second pass: attention restricted to the input view
    const DepthMapSet eps2 =
        denoiser.predict_epsilon(intermediate, schedule.alpha_bar[t], view_index);
    const DepthMapSet mean2 = posterior_mean(intermediate, eps2, t, schedule);
    for (int v = 0; v < state.views; ++v) {
      if (v == view_index) continue;
      Rng stream = base.fork(rng_stream::kPassTwo).fork(v).fork(static_cast<uint64_t>(t));
      auto dst = state.view(v);
      const auto mu = mean2.view(v);
      for (size_t i = 0; i < view_elems; ++i) {
        const double z = t > 1 ? stream.gaussian() : 0.0;
        dst[i] = mu[i] + sigma * z;
      }
    }

    // input-view chain for the next iteration, q with alpha_bar_t per the
    // conditional sampler
    if (t > 1) {
      Rng stream = base.fork(rng_stream::kInputChain).fork(static_cast<uint64_t>(t - 1));
      const double a = std::sqrt(schedule.alpha_bar[t]);
      const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
      auto slot = state.view(view_index);
      for (size_t i = 0; i < view_elems; ++i) slot[i] = a * input_view[i] + b * stream.gaussian();
    }
  }

  state.clip();
  auto slot = state.view(view_index);
  std::copy(input_view.begin(), input_view.end(), slot.begin());
  return state;
}

}  // namespace mvdd
