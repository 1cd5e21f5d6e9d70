#pragma once

#include <span>
#include <vector>

#include "mvdd/geometry.hpp"

namespace mvdd {

/// Per-view feature grids, channel-major.
struct FeatureMaps {
  int views = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;  // views x channels x height x width

  double at(int v, int c, int y, int x) const {
    return data[((static_cast<size_t>(v) * channels + c) * height + y) * width + x];
  }
  double& at(int v, int c, int y, int x) {
    return data[((static_cast<size_t>(v) * channels + c) * height + y) * width + x];
  }
};

/// Geometry of one epipolar gather: for every query pixel, R neighbors x k
/// segment samples with visibility, bilinear corners into the neighbor grid,
/// and the sample's source-ray depth in normalized units. Built once per
/// denoising step from the current depth estimate; feature gathering and its
/// gradient reuse it.
struct EpipolarPlan {
  int views = 0, height = 0, width = 0;
  int neighbors = 0;  // R
  int samples = 0;    // k

  std::vector<int> neighbor_view;  // views x R

  // per (v, y, x, r, s)
  std::vector<uint8_t> visible;
  std::vector<int> corner;  // y0 * width + x0 into the neighbor grid; -1 when out of bounds
  std::vector<double> w00, w01, w10, w11;
  std::vector<double> sample_depth;  // normalized source-ray depth appended to V

  size_t rows_per_query() const { return static_cast<size_t>(neighbors) * samples; }
  size_t entry(int v, int y, int x, int r, int s) const {
    return (((static_cast<size_t>(v) * height + y) * width + x) * neighbors + r) * samples + s;
  }
};

// Project k evenly spaced samples around each pixel's back-projected depth
// into the R nearest neighbor views, thresholding visibility against the
// neighbor depth estimates with tau (world units).
EpipolarPlan build_epipolar_plan(const DepthMapSet& depth_estimates, int k, int R, double delta,
                                 double tau);

// Same, but with explicit per-view neighbor lists (views x R, flattened).
// Used by the completion sampler's second pass to attend only to the input
// view.
EpipolarPlan build_epipolar_plan(const DepthMapSet& depth_estimates, int k,
                                 std::span<const int> neighbor_lists, int R, double delta,
                                 double tau);

/// Flattened attention inputs: one query per pixel, R*k key/value rows. K
/// carries the gathered neighbor features; V additionally carries the sample
/// depth, so its last dimension is feat_dim + 1.
struct AttentionBatch {
  int queries = 0;
  int rows = 0;
  int feat_dim = 0;
  std::vector<double> q;      // queries x feat_dim
  std::vector<double> k;      // queries x rows x feat_dim
  std::vector<double> v;      // queries x rows x (feat_dim + 1)
  std::vector<uint8_t> mask;  // queries x rows
};

AttentionBatch gather_kv(const FeatureMaps& features, const EpipolarPlan& plan);

AttentionBatch build_epipolar_kv(const FeatureMaps& features, const DepthMapSet& depth_estimates,
                                 int k, int R, double delta, double tau);

// softmax(Q K^T / sqrt(feat_dim)) V with masked logits overwritten to -1e4
// before the softmax; fully masked queries output zeros. The widened V is
// folded back to feat_dim by the learned linear map (fold_w row-major
// feat_dim x (feat_dim + 1), fold_b length feat_dim). When weights_out is
// given it receives the queries x rows attention weights (zeros for fully
// masked queries).
std::vector<double> epipolar_attention(const AttentionBatch& batch,
                                       std::span<const double> fold_w,
                                       std::span<const double> fold_b,
                                       std::vector<double>* weights_out = nullptr);

inline constexpr double kMaskedLogit = -1e4;

}  // namespace mvdd
