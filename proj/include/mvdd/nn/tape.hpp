#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvdd/attention.hpp"

namespace mvdd::nn {

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  size_t size() const { return value.size(); }
};

class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape);
  Parameter& at(int i) { return items[i]; }
  const Parameter& at(int i) const { return items[i]; }
  int count() const { return static_cast<int>(items.size()); }
  size_t total_size() const;
  void zero_grad();
  void scale_grad(double factor);

  std::vector<Parameter> items;
};

/// Reverse-mode tape over dense double tensors. Every op records a closure
/// computing the vector-Jacobian product; backward() sweeps the tape in
/// reverse insertion order and accumulates parameter gradients into the
/// bound ParamStore.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  int constant(std::vector<int> shape, std::span<const double> data);
  int param(int param_index);

  int add(int a, int b);
  int silu(int x);
  // x [n,din], w [dout,din], b [dout] -> [n,dout]
  int linear(int x, int w, int b);
  int slice_cols(int x, int offset, int len);
  // rows [n,d] + vec [d] per row
  int broadcast_add(int rows, int vec);
  // x [n,c,h,w], w [co,ci,3,3], b [co]; stride 1, zero padding 1
  int conv3x3(int x, int w, int b);
  int conv1x1(int x, int w, int b);
  int avg_pool2(int x);
  int upsample2(int x);
  int group_norm(int x, int groups, double eps = 1e-5);
  // y = x * (1 + scale) + shift, scale/shift [n,c]
  int modulate(int x, int scale, int shift);
  int concat_channels(int a, int b);
  // multi-head epipolar attention over feature maps [n,c,h,w]; each head
  // shares the appended depth channel, fold_w is [c, c + heads]
  int epipolar_attention(int x, std::shared_ptr<const EpipolarPlan> plan, int fold_w,
                         int fold_b, int heads);
  // mean squared error against a fixed target, scalar output
  int mse(int x, std::span<const double> target);

  void backward(int id);

  const std::vector<double>& value(int id) const { return nodes_[id].value; }
  const std::vector<int>& shape(int id) const { return nodes_[id].shape; }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool grad_set = false;
    int param = -1;
    std::function<void()> backward;
  };

  int push(std::vector<int> shape, size_t size);
  std::vector<double>& grad_of(int id);

  std::vector<Node> nodes_;
  ParamStore* store_;
};

// fills `out` with the sin/cos positional encoding of a scalar; half the
// dimensions are sines, half cosines, frequencies 10000^{-i/(half-1)}
void positional_encoding(double value, std::span<double> out);

struct AdamOptimizer {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(ParamStore& params);

 private:
  int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mvdd::nn
