#include "mvdd/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace mvdd {

EpipolarPlan build_epipolar_plan(const DepthMapSet& depth, int k, int R, double delta,
                                 double tau) {
  if (R < 1 || R > depth.views - 1)
    throw std::invalid_argument("build_epipolar_plan: R must be in [1, views-1]");
  std::vector<int> lists(static_cast<size_t>(depth.views) * R);
  for (int v = 0; v < depth.views; ++v) {
    const auto nbrs = nearest_neighbors(depth.rig, v, R);
    for (int r = 0; r < R; ++r) lists[static_cast<size_t>(v) * R + r] = nbrs[r];
  }
  return build_epipolar_plan(depth, k, lists, R, delta, tau);
}

EpipolarPlan build_epipolar_plan(const DepthMapSet& depth, int k,
                                 std::span<const int> neighbor_lists, int R, double delta,
                                 double tau) {
  if (k < 1) throw std::invalid_argument("build_epipolar_plan: k must be >= 1");
  if (R < 1 || neighbor_lists.size() != static_cast<size_t>(depth.views) * R)
    throw std::invalid_argument("build_epipolar_plan: bad neighbor lists");

  EpipolarPlan plan;
  plan.views = depth.views;
  plan.height = depth.height;
  plan.width = depth.width;
  plan.neighbors = R;
  plan.samples = k;
  plan.neighbor_view.assign(neighbor_lists.begin(), neighbor_lists.end());

  const size_t total =
      static_cast<size_t>(depth.views) * depth.height * depth.width * R * k;
  plan.visible.assign(total, 0);
  plan.corner.assign(total, -1);
  plan.w00.assign(total, 0.0);
  plan.w01.assign(total, 0.0);
  plan.w10.assign(total, 0.0);
  plan.w11.assign(total, 0.0);
  plan.sample_depth.assign(total, 0.0);

  std::vector<std::vector<double>> world(depth.views);
  for (int v = 0; v < depth.views; ++v) world[v] = depth.world_view(v);

  for (int v = 0; v < depth.views; ++v) {
    const Camera& cam = depth.rig.cameras[v];
    for (int y = 0; y < depth.height; ++y) {
      for (int x = 0; x < depth.width; ++x) {
        const double own = world[v][static_cast<size_t>(y) * depth.width + x];
        const auto segment = sample_ray_segment(x, y, own, k, delta, cam.intrinsics);
        for (int r = 0; r < R; ++r) {
          const int nv = plan.neighbor_view[static_cast<size_t>(v) * R + r];
          const Camera& nbr = depth.rig.cameras[nv];
          for (int s = 0; s < k; ++s) {
            const size_t e = plan.entry(v, y, x, r, s);
            const Eigen::Vector3d& p_cam = segment[s];
            plan.sample_depth[e] = depth.range.normalize(p_cam.z());

            const Eigen::Vector3d p_world = cam.pose.to_world(p_cam);
            const Eigen::Vector3d p_nbr = nbr.pose.to_camera(p_world);
            if (!(p_nbr.z() > 0.0)) continue;
            const Projection proj = project(p_nbr, nbr.intrinsics);
            const double px = proj.px, py = proj.py;
            if (!(px >= 0.0) || !(py >= 0.0) || !(px <= depth.width - 1.0) ||
                !(py <= depth.height - 1.0))
              continue;

            const int x0 = std::min(static_cast<int>(px), depth.width - 2);
            const int y0 = std::min(static_cast<int>(py), depth.height - 2);
            const double fx = px - x0, fy = py - y0;
            plan.corner[e] = y0 * depth.width + x0;
            plan.w00[e] = (1 - fy) * (1 - fx);
            plan.w01[e] = (1 - fy) * fx;
            plan.w10[e] = fy * (1 - fx);
            plan.w11[e] = fy * fx;

            const double stored = plan.w00[e] * world[nv][plan.corner[e]] +
                                  plan.w01[e] * world[nv][plan.corner[e] + 1] +
                                  plan.w10[e] * world[nv][plan.corner[e] + depth.width] +
                                  plan.w11[e] * world[nv][plan.corner[e] + depth.width + 1];
            plan.visible[e] = std::abs(p_nbr.z() - stored) < tau ? 1 : 0;
          }
        }
      }
    }
  }
  return plan;
}

AttentionBatch gather_kv(const FeatureMaps& features, const EpipolarPlan& plan) {
  if (features.views != plan.views || features.height != plan.height ||
      features.width != plan.width)
    throw std::invalid_argument("gather_kv: feature/plan dimensions mismatch");

  AttentionBatch batch;
  batch.queries = plan.views * plan.height * plan.width;
  batch.rows = plan.neighbors * plan.samples;
  batch.feat_dim = features.channels;
  const int f = batch.feat_dim;
  batch.q.resize(static_cast<size_t>(batch.queries) * f);
  batch.k.assign(static_cast<size_t>(batch.queries) * batch.rows * f, 0.0);
  batch.v.assign(static_cast<size_t>(batch.queries) * batch.rows * (f + 1), 0.0);
  batch.mask.assign(static_cast<size_t>(batch.queries) * batch.rows, 0);

  const size_t hw = static_cast<size_t>(plan.height) * plan.width;
  int query = 0;
  for (int v = 0; v < plan.views; ++v) {
    for (int y = 0; y < plan.height; ++y) {
      for (int x = 0; x < plan.width; ++x, ++query) {
        for (int c = 0; c < f; ++c)
          batch.q[static_cast<size_t>(query) * f + c] = features.at(v, c, y, x);
        int row = 0;
        for (int r = 0; r < plan.neighbors; ++r) {
          const int nv = plan.neighbor_view[static_cast<size_t>(v) * plan.neighbors + r];
          const double* nbr_base =
              features.data.data() + static_cast<size_t>(nv) * features.channels * hw;
          for (int s = 0; s < plan.samples; ++s, ++row) {
            const size_t e = plan.entry(v, y, x, r, s);
            double* krow = batch.k.data() + (static_cast<size_t>(query) * batch.rows + row) * f;
            double* vrow =
                batch.v.data() + (static_cast<size_t>(query) * batch.rows + row) * (f + 1);
            if (plan.corner[e] >= 0) {
              const int base = plan.corner[e];
              for (int c = 0; c < f; ++c) {
                const double* ch = nbr_base + static_cast<size_t>(c) * hw;
                const double g = plan.w00[e] * ch[base] + plan.w01[e] * ch[base + 1] +
                                 plan.w10[e] * ch[base + plan.width] +
                                 plan.w11[e] * ch[base + plan.width + 1];
                krow[c] = g;
                vrow[c] = g;
              }
            }
            vrow[f] = plan.sample_depth[e];
            batch.mask[static_cast<size_t>(query) * batch.rows + row] = plan.visible[e];
          }
        }
      }
    }
  }
  return batch;
}

AttentionBatch build_epipolar_kv(const FeatureMaps& features, const DepthMapSet& depth,
                                 int k, int R, double delta, double tau) {
  return gather_kv(features, build_epipolar_plan(depth, k, R, delta, tau));
}

std::vector<double> epipolar_attention(const AttentionBatch& batch,
                                       std::span<const double> fold_w,
                                       std::span<const double> fold_b,
                                       std::vector<double>* weights_out) {
  const int f = batch.feat_dim;
  if (fold_w.size() != static_cast<size_t>(f) * (f + 1) || fold_b.size() != static_cast<size_t>(f))
    throw std::invalid_argument("epipolar_attention: fold map shape mismatch");

  if (weights_out)
    weights_out->assign(static_cast<size_t>(batch.queries) * batch.rows, 0.0);
  std::vector<double> out(static_cast<size_t>(batch.queries) * f, 0.0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(f));
  std::vector<double> logits(batch.rows), weights(batch.rows), widened(f + 1);

  for (int qi = 0; qi < batch.queries; ++qi) {
    const double* q = batch.q.data() + static_cast<size_t>(qi) * f;
    const uint8_t* mask = batch.mask.data() + static_cast<size_t>(qi) * batch.rows;
    bool any_visible = false;
    double max_logit = kMaskedLogit;
    for (int row = 0; row < batch.rows; ++row) {
      if (mask[row]) {
        const double* krow = batch.k.data() + (static_cast<size_t>(qi) * batch.rows + row) * f;
        double dot = 0.0;
        for (int c = 0; c < f; ++c) dot += q[c] * krow[c];
        logits[row] = dot * inv_sqrt;
        any_visible = true;
      } else {
        logits[row] = kMaskedLogit;
      }
      max_logit = std::max(max_logit, logits[row]);
    }
    if (!any_visible) continue;  // fully masked -> zeros

    double denom = 0.0;
    for (int row = 0; row < batch.rows; ++row) {
      weights[row] = std::exp(logits[row] - max_logit);
      denom += weights[row];
    }
    for (int row = 0; row < batch.rows; ++row) weights[row] /= denom;
    if (weights_out)
      std::copy(weights.begin(), weights.end(),
                weights_out->begin() + static_cast<size_t>(qi) * batch.rows);

    std::fill(widened.begin(), widened.end(), 0.0);
    for (int row = 0; row < batch.rows; ++row) {
      const double* vrow =
          batch.v.data() + (static_cast<size_t>(qi) * batch.rows + row) * (f + 1);
      const double w = weights[row];
      for (int c = 0; c <= f; ++c) widened[c] += w * vrow[c];
    }
    double* orow = out.data() + static_cast<size_t>(qi) * f;
    for (int c = 0; c < f; ++c) {
      double acc = fold_b[c];
      const double* wrow = fold_w.data() + static_cast<size_t>(c) * (f + 1);
      for (int j = 0; j <= f; ++j) acc += wrow[j] * widened[j];
      orow[c] = acc;
    }
  }
  return out;
}

}  // namespace mvdd
