#include "mvdd/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvdd::nn {

namespace {

size_t numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int ParamStore::add(std::string name, std::vector<int> shape) {
  Parameter p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value.assign(numel(p.shape), 0.0);
  p.grad.assign(p.value.size(), 0.0);
  items.push_back(std::move(p));
  return count() - 1;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& p : items) n += p.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : items) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParamStore::scale_grad(double factor) {
  for (auto& p : items)
    for (double& g : p.grad) g *= factor;
}

int Tape::push(std::vector<int> shape, size_t size) {
  Node node;
  node.shape = std::move(shape);
  node.value.assign(size, 0.0);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (!n.grad_set) {
    n.grad.assign(n.value.size(), 0.0);
    n.grad_set = true;
  }
  return n.grad;
}

int Tape::constant(std::vector<int> shape, std::span<const double> data) {
  if (numel(shape) != data.size()) throw std::invalid_argument("Tape::constant: size mismatch");
  const int id = push(std::move(shape), data.size());
  std::copy(data.begin(), data.end(), nodes_[id].value.begin());
  return id;
}

int Tape::param(int param_index) {
  if (!store_) throw std::invalid_argument("Tape::param: no parameter store bound");
  const Parameter& p = store_->at(param_index);
  const int id = push(p.shape, p.size());
  std::copy(p.value.begin(), p.value.end(), nodes_[id].value.begin());
  nodes_[id].param = param_index;
  return id;
}

int Tape::add(int a, int b) {
  if (nodes_[a].value.size() != nodes_[b].value.size())
    throw std::invalid_argument("Tape::add: size mismatch");
  const int id = push(nodes_[a].shape, nodes_[a].value.size());
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  auto& out = nodes_[id].value;
  for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  nodes_[id].backward = [this, id, a, b]() {
    const auto& g = nodes_[id].grad;
    auto& ga = grad_of(a);
    auto& gb = grad_of(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return id;
}

int Tape::silu(int x) {
  const int id = push(nodes_[x].shape, nodes_[x].value.size());
  const auto& vx = nodes_[x].value;
  auto& out = nodes_[id].value;
  for (size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * sigmoid(vx[i]);
  nodes_[id].backward = [this, id, x]() {
    const auto& g = nodes_[id].grad;
    const auto& vx = nodes_[x].value;
    auto& gx = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(vx[i]);
      gx[i] += g[i] * s * (1.0 + vx[i] * (1.0 - s));
    }
  };
  return id;
}

int Tape::linear(int x, int w, int b) {
  const auto& xs = nodes_[x].shape;
  const auto& ws = nodes_[w].shape;
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("Tape::linear: shape mismatch");
  const int n = xs[0], din = xs[1], dout = ws[0];
  const int id = push({n, dout}, static_cast<size_t>(n) * dout);
  const auto& vx = nodes_[x].value;
  const auto& vw = nodes_[w].value;
  const auto& vb = nodes_[b].value;
  auto& out = nodes_[id].value;
  for (int r = 0; r < n; ++r) {
    for (int o = 0; o < dout; ++o) {
      double acc = vb[o];
      const double* xr = vx.data() + static_cast<size_t>(r) * din;
      const double* wr = vw.data() + static_cast<size_t>(o) * din;
      for (int i = 0; i < din; ++i) acc += xr[i] * wr[i];
      out[static_cast<size_t>(r) * dout + o] = acc;
    }
  }
  nodes_[id].backward = [this, id, x, w, b, n, din, dout]() {
    const auto& g = nodes_[id].grad;
    const auto& vx = nodes_[x].value;
    const auto& vw = nodes_[w].value;
    auto& gx = grad_of(x);
    auto& gw = grad_of(w);
    auto& gb = grad_of(b);
    for (int r = 0; r < n; ++r) {
      const double* gr = g.data() + static_cast<size_t>(r) * dout;
      const double* xr = vx.data() + static_cast<size_t>(r) * din;
      double* gxr = gx.data() + static_cast<size_t>(r) * din;
      for (int o = 0; o < dout; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        gb[o] += go;
        const double* wr = vw.data() + static_cast<size_t>(o) * din;
        double* gwr = gw.data() + static_cast<size_t>(o) * din;
        for (int i = 0; i < din; ++i) {
          gwr[i] += go * xr[i];
          gxr[i] += go * wr[i];
        }
      }
    }
  };
  return id;
}

int Tape::slice_cols(int x, int offset, int len) {
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 2 || offset < 0 || offset + len > xs[1])
    throw std::invalid_argument("Tape::slice_cols: bad slice");
  const int n = xs[0], d = xs[1];
  const int id = push({n, len}, static_cast<size_t>(n) * len);
  const auto& vx = nodes_[x].value;
  auto& out = nodes_[id].value;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < len; ++c)
      out[static_cast<size_t>(r) * len + c] = vx[static_cast<size_t>(r) * d + offset + c];
  nodes_[id].backward = [this, id, x, offset, len, n, d]() {
    const auto& g = nodes_[id].grad;
    auto& gx = grad_of(x);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < len; ++c)
        gx[static_cast<size_t>(r) * d + offset + c] += g[static_cast<size_t>(r) * len + c];
  };
  return id;
}

int Tape::broadcast_add(int rows, int vec) {
  const auto& rs = nodes_[rows].shape;
  if (rs.size() != 2) throw std::invalid_argument("Tape::broadcast_add: rows must be 2-d");
  const int n = rs[0], d = rs[1];
  if (nodes_[vec].value.size() != static_cast<size_t>(d))
    throw std::invalid_argument("Tape::broadcast_add: vector size mismatch");
  const int id = push({n, d}, static_cast<size_t>(n) * d);
  const auto& vr = nodes_[rows].value;
  const auto& vv = nodes_[vec].value;
  auto& out = nodes_[id].value;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      out[static_cast<size_t>(r) * d + c] = vr[static_cast<size_t>(r) * d + c] + vv[c];
  nodes_[id].backward = [this, id, rows, vec, n, d]() {
    const auto& g = nodes_[id].grad;
    auto& gr = grad_of(rows);
    auto& gv = grad_of(vec);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) {
        gr[static_cast<size_t>(r) * d + c] += g[static_cast<size_t>(r) * d + c];
        gv[c] += g[static_cast<size_t>(r) * d + c];
      }
  };
  return id;
}

int Tape::conv3x3(int x, int w, int b) {
  const auto& xs = nodes_[x].shape;
  const auto& ws = nodes_[w].shape;
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[1])
    throw std::invalid_argument("Tape::conv3x3: shape mismatch");
  const int n = xs[0], ci = xs[1], h = xs[2], wd = xs[3], co = ws[0];
  const int id = push({n, co, h, wd}, static_cast<size_t>(n) * co * h * wd);
  const auto& vx = nodes_[x].value;
  const auto& vw = nodes_[w].value;
  const auto& vb = nodes_[b].value;
  auto& out = nodes_[id].value;
  const size_t plane = static_cast<size_t>(h) * wd;

  for (int nn = 0; nn < n; ++nn) {
    for (int o = 0; o < co; ++o) {
      double* oplane = out.data() + (static_cast<size_t>(nn) * co + o) * plane;
      std::fill(oplane, oplane + plane, vb[o]);
      for (int i = 0; i < ci; ++i) {
        const double* xplane = vx.data() + (static_cast<size_t>(nn) * ci + i) * plane;
        const double* kw = vw.data() + ((static_cast<size_t>(o) * ci + i) * 3) * 3;
        for (int ky = 0; ky < 3; ++ky) {
          const double w0 = kw[3 * ky], w1 = kw[3 * ky + 1], w2 = kw[3 * ky + 2];
          for (int y = 0; y < h; ++y) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            const double* xr = xplane + static_cast<size_t>(yy) * wd;
            double* orow = oplane + static_cast<size_t>(y) * wd;
            orow[0] += w1 * xr[0] + (wd > 1 ? w2 * xr[1] : 0.0);
            for (int xi = 1; xi < wd - 1; ++xi)
              orow[xi] += w0 * xr[xi - 1] + w1 * xr[xi] + w2 * xr[xi + 1];
            if (wd > 1) orow[wd - 1] += w0 * xr[wd - 2] + w1 * xr[wd - 1];
          }
        }
      }
    }
  }

  nodes_[id].backward = [this, id, x, w, b, n, ci, h, wd, co, plane]() {
    const auto& g = nodes_[id].grad;
    const auto& vx = nodes_[x].value;
    const auto& vw = nodes_[w].value;
    auto& gx = grad_of(x);
    auto& gw = grad_of(w);
    auto& gb = grad_of(b);
    for (int nn = 0; nn < n; ++nn) {
      for (int o = 0; o < co; ++o) {
        const double* gplane = g.data() + (static_cast<size_t>(nn) * co + o) * plane;
        for (size_t p = 0; p < plane; ++p) gb[o] += gplane[p];
        for (int i = 0; i < ci; ++i) {
          const double* xplane = vx.data() + (static_cast<size_t>(nn) * ci + i) * plane;
          double* gxplane = gx.data() + (static_cast<size_t>(nn) * ci + i) * plane;
          const double* kw = vw.data() + ((static_cast<size_t>(o) * ci + i) * 3) * 3;
          double* gkw = gw.data() + ((static_cast<size_t>(o) * ci + i) * 3) * 3;
          for (int ky = 0; ky < 3; ++ky) {
            const double w0 = kw[3 * ky], w1 = kw[3 * ky + 1], w2 = kw[3 * ky + 2];
            double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0;
            for (int y = 0; y < h; ++y) {
              const int yy = y + ky - 1;
              if (yy < 0 || yy >= h) continue;
              const double* xr = xplane + static_cast<size_t>(yy) * wd;
              double* gxr = gxplane + static_cast<size_t>(yy) * wd;
              const double* grow = gplane + static_cast<size_t>(y) * wd;
              // weight gradients: correlate output grad with shifted input
              for (int xi = 1; xi < wd; ++xi) acc0 += grow[xi] * xr[xi - 1];
              for (int xi = 0; xi < wd; ++xi) acc1 += grow[xi] * xr[xi];
              for (int xi = 0; xi < wd - 1; ++xi) acc2 += grow[xi] * xr[xi + 1];
              // input gradients: scatter with the same shifts
              for (int xi = 1; xi < wd; ++xi) gxr[xi - 1] += w0 * grow[xi];
              for (int xi = 0; xi < wd; ++xi) gxr[xi] += w1 * grow[xi];
              for (int xi = 0; xi < wd - 1; ++xi) gxr[xi + 1] += w2 * grow[xi];
            }
            gkw[3 * ky] += acc0;
            gkw[3 * ky + 1] += acc1;
            gkw[3 * ky + 2] += acc2;
          }
        }
      }
    }
  };
  return id;
}

int Tape::conv1x1(int x, int w, int b) {
  const auto& xs = nodes_[x].shape;
  const auto& ws = nodes_[w].shape;
  if (xs.size() != 4 || ws.size() != 2 || ws[1] != xs[1])
    throw std::invalid_argument("Tape::conv1x1: shape mismatch");
  const int n = xs[0], ci = xs[1], h = xs[2], wd = xs[3], co = ws[0];
  const size_t plane = static_cast<size_t>(h) * wd;
  const int id = push({n, co, h, wd}, static_cast<size_t>(n) * co * plane);
  const auto& vx = nodes_[x].value;
  const auto& vw = nodes_[w].value;
  const auto& vb = nodes_[b].value;
  auto& out = nodes_[id].value;
  for (int nn = 0; nn < n; ++nn) {
    for (int o = 0; o < co; ++o) {
      double* oplane = out.data() + (static_cast<size_t>(nn) * co + o) * plane;
      std::fill(oplane, oplane + plane, vb[o]);
      for (int i = 0; i < ci; ++i) {
        const double wv = vw[static_cast<size_t>(o) * ci + i];
        const double* xplane = vx.data() + (static_cast<size_t>(nn) * ci + i) * plane;
        for (size_t p = 0; p < plane; ++p) oplane[p] += wv * xplane[p];
      }
    }
  }
  nodes_[id].backward = [this, id, x, w, b, n, ci, co, plane]() {
    const auto& g = nodes_[id].grad;
    const auto& vx = nodes_[x].value;
    const auto& vw = nodes_[w].value;
    auto& gx = grad_of(x);
    auto& gw = grad_of(w);
    auto& gb = grad_of(b);
    for (int nn = 0; nn < n; ++nn) {
      for (int o = 0; o < co; ++o) {
        const double* gplane = g.data() + (static_cast<size_t>(nn) * co + o) * plane;
        for (size_t p = 0; p < plane; ++p) gb[o] += gplane[p];
        for (int i = 0; i < ci; ++i) {
          const double wv = vw[static_cast<size_t>(o) * ci + i];
          const double* xplane = vx.data() + (static_cast<size_t>(nn) * ci + i) * plane;
          double* gxplane = gx.data() + (static_cast<size_t>(nn) * ci + i) * plane;
          double acc = 0.0;
          for (size_t p = 0; p < plane; ++p) {
            acc += gplane[p] * xplane[p];
            gxplane[p] += wv * gplane[p];
          }
          gw[static_cast<size_t>(o) * ci + i] += acc;
        }
      }
    }
  };
  return id;
}

int Tape::avg_pool2(int x) {
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0)
    throw std::invalid_argument("Tape::avg_pool2: shape mismatch");
  const int n = xs[0], c = xs[1], h = xs[2] / 2, wd = xs[3] / 2;
  const int id = push({n, c, h, wd}, static_cast<size_t>(n) * c * h * wd);
  const auto& vx = nodes_[x].value;
  auto& out = nodes_[id].value;
  const int hw2 = xs[3];
  for (int p = 0; p < n * c; ++p) {
    const double* xplane = vx.data() + static_cast<size_t>(p) * xs[2] * hw2;
    double* oplane = out.data() + static_cast<size_t>(p) * h * wd;
    for (int y = 0; y < h; ++y)
      for (int xi = 0; xi < wd; ++xi)
        oplane[static_cast<size_t>(y) * wd + xi] =
            0.25 * (xplane[static_cast<size_t>(2 * y) * hw2 + 2 * xi] +
                    xplane[static_cast<size_t>(2 * y) * hw2 + 2 * xi + 1] +
                    xplane[static_cast<size_t>(2 * y + 1) * hw2 + 2 * xi] +
                    xplane[static_cast<size_t>(2 * y + 1) * hw2 + 2 * xi + 1]);
  }
  nodes_[id].backward = [this, id, x, n, c, h, wd, hw2]() {
    const auto& g = nodes_[id].grad;
    auto& gx = grad_of(x);
    for (int p = 0; p < n * c; ++p) {
      const double* gplane = g.data() + static_cast<size_t>(p) * h * wd;
      double* gxplane = gx.data() + static_cast<size_t>(p) * 2 * h * hw2;
      for (int y = 0; y < h; ++y)
        for (int xi = 0; xi < wd; ++xi) {
          const double gv = 0.25 * gplane[static_cast<size_t>(y) * wd + xi];
          gxplane[static_cast<size_t>(2 * y) * hw2 + 2 * xi] += gv;
          gxplane[static_cast<size_t>(2 * y) * hw2 + 2 * xi + 1] += gv;
          gxplane[static_cast<size_t>(2 * y + 1) * hw2 + 2 * xi] += gv;
          gxplane[static_cast<size_t>(2 * y + 1) * hw2 + 2 * xi + 1] += gv;
        }
    }
  };
  return id;
}

int Tape::upsample2(int x) {
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 4) throw std::invalid_argument("Tape::upsample2: shape mismatch");
  const int n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const int id = push({n, c, 2 * h, 2 * wd}, static_cast<size_t>(n) * c * 4 * h * wd);
  const auto& vx = nodes_[x].value;
  auto& out = nodes_[id].value;
  for (int p = 0; p < n * c; ++p) {
    const double* xplane = vx.data() + static_cast<size_t>(p) * h * wd;
    double* oplane = out.data() + static_cast<size_t>(p) * 4 * h * wd;
    for (int y = 0; y < h; ++y)
      for (int xi = 0; xi < wd; ++xi) {
        const double v = xplane[static_cast<size_t>(y) * wd + xi];
        oplane[static_cast<size_t>(2 * y) * 2 * wd + 2 * xi] = v;
        oplane[static_cast<size_t>(2 * y) * 2 * wd + 2 * xi + 1] = v;
        oplane[static_cast<size_t>(2 * y + 1) * 2 * wd + 2 * xi] = v;
        oplane[static_cast<size_t>(2 * y + 1) * 2 * wd + 2 * xi + 1] = v;
      }
  }
  nodes_[id].backward = [this, id, x, n, c, h, wd]() {
    const auto& g = nodes_[id].grad;
    auto& gx = grad_of(x);
    for (int p = 0; p < n * c; ++p) {
      const double* gplane = g.data() + static_cast<size_t>(p) * 4 * h * wd;
      double* gxplane = gx.data() + static_cast<size_t>(p) * h * wd;
      for (int y = 0; y < h; ++y)
        for (int xi = 0; xi < wd; ++xi)
          gxplane[static_cast<size_t>(y) * wd + xi] +=
              gplane[static_cast<size_t>(2 * y) * 2 * wd + 2 * xi] +
              gplane[static_cast<size_t>(2 * y) * 2 * wd + 2 * xi + 1] +
              gplane[static_cast<size_t>(2 * y + 1) * 2 * wd + 2 * xi] +
              gplane[static_cast<size_t>(2 * y + 1) * 2 * wd + 2 * xi + 1];
    }
  };
  return id;
}

int Tape::group_norm(int x, int groups, double eps) {
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 4 || xs[1] % groups != 0)
    throw std::invalid_argument("Tape::group_norm: channels not divisible by groups");
  const int n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const size_t gsize = static_cast<size_t>(c / groups) * h * wd;
  const int id = push(xs, nodes_[x].value.size());
  const auto& vx = nodes_[x].value;
  auto& out = nodes_[id].value;
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * groups);

  for (int nn = 0; nn < n; ++nn) {
    for (int g = 0; g < groups; ++g) {
      const size_t base = (static_cast<size_t>(nn) * c) * h * wd + g * gsize;
      double mean = 0.0;
      for (size_t i = 0; i < gsize; ++i) mean += vx[base + i];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (size_t i = 0; i < gsize; ++i) {
        const double d = vx[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<size_t>(nn) * groups + g] = is;
      for (size_t i = 0; i < gsize; ++i) out[base + i] = (vx[base + i] - mean) * is;
    }
  }

  nodes_[id].backward = [this, id, x, n, c, h, wd, groups, gsize, inv_std]() {
    const auto& g = nodes_[id].grad;
    const auto& y = nodes_[id].value;  // normalized output
    auto& gx = grad_of(x);
    for (int nn = 0; nn < n; ++nn) {
      for (int gi = 0; gi < groups; ++gi) {
        const size_t base = (static_cast<size_t>(nn) * c) * h * wd + gi * gsize;
        const double is = (*inv_std)[static_cast<size_t>(nn) * groups + gi];
        double mean_g = 0.0, mean_gy = 0.0;
        for (size_t i = 0; i < gsize; ++i) {
          mean_g += g[base + i];
          mean_gy += g[base + i] * y[base + i];
        }
        mean_g /= static_cast<double>(gsize);
        mean_gy /= static_cast<double>(gsize);
        for (size_t i = 0; i < gsize; ++i)
          gx[base + i] += is * (g[base + i] - mean_g - y[base + i] * mean_gy);
      }
    }
  };
  return id;
}

int Tape::modulate(int x, int scale, int shift) {
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 4) throw std::invalid_argument("Tape::modulate: x must be 4-d");
  const int n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  if (nodes_[scale].value.size() != static_cast<size_t>(n) * c ||
      nodes_[shift].value.size() != static_cast<size_t>(n) * c)
    throw std::invalid_argument("Tape::modulate: conditioning shape mismatch");
  const size_t plane = static_cast<size_t>(h) * wd;
  const int id = push(xs, nodes_[x].value.size());
  const auto& vx = nodes_[x].value;
  const auto& vs = nodes_[scale].value;
  const auto& vsh = nodes_[shift].value;
  auto& out = nodes_[id].value;
  for (int nn = 0; nn < n; ++nn)
    for (int ch = 0; ch < c; ++ch) {
      const double s = 1.0 + vs[static_cast<size_t>(nn) * c + ch];
      const double sh = vsh[static_cast<size_t>(nn) * c + ch];
      const size_t base = (static_cast<size_t>(nn) * c + ch) * plane;
      for (size_t p = 0; p < plane; ++p) out[base + p] = vx[base + p] * s + sh;
    }
  nodes_[id].backward = [this, id, x, scale, shift, n, c, plane]() {
    const auto& g = nodes_[id].grad;
    const auto& vx = nodes_[x].value;
    const auto& vs = nodes_[scale].value;
    auto& gx = grad_of(x);
    auto& gs = grad_of(scale);
    auto& gsh = grad_of(shift);
    for (int nn = 0; nn < n; ++nn)
      for (int ch = 0; ch < c; ++ch) {
        const double s = 1.0 + vs[static_cast<size_t>(nn) * c + ch];
        const size_t base = (static_cast<size_t>(nn) * c + ch) * plane;
        double acc_s = 0.0, acc_sh = 0.0;
        for (size_t p = 0; p < plane; ++p) {
          gx[base + p] += g[base + p] * s;
          acc_s += g[base + p] * vx[base + p];
          acc_sh += g[base + p];
        }
        gs[static_cast<size_t>(nn) * c + ch] += acc_s;
        gsh[static_cast<size_t>(nn) * c + ch] += acc_sh;
      }
  };
  return id;
}

int Tape::concat_channels(int a, int b) {
  const auto& as = nodes_[a].shape;
  const auto& bs = nodes_[b].shape;
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw std::invalid_argument("Tape::concat_channels: shape mismatch");
  const int n = as[0], ca = as[1], cb = bs[1], h = as[2], wd = as[3];
  const size_t plane = static_cast<size_t>(h) * wd;
  const int id = push({n, ca + cb, h, wd}, static_cast<size_t>(n) * (ca + cb) * plane);
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  auto& out = nodes_[id].value;
  for (int nn = 0; nn < n; ++nn) {
    std::copy(va.begin() + static_cast<size_t>(nn) * ca * plane,
              va.begin() + static_cast<size_t>(nn + 1) * ca * plane,
              out.begin() + static_cast<size_t>(nn) * (ca + cb) * plane);
    std::copy(vb.begin() + static_cast<size_t>(nn) * cb * plane,
              vb.begin() + static_cast<size_t>(nn + 1) * cb * plane,
              out.begin() + static_cast<size_t>(nn) * (ca + cb) * plane + ca * plane);
  }
  nodes_[id].backward = [this, id, a, b, n, ca, cb, plane]() {
    const auto& g = nodes_[id].grad;
    auto& ga = grad_of(a);
    auto& gb = grad_of(b);
    for (int nn = 0; nn < n; ++nn) {
      const size_t obase = static_cast<size_t>(nn) * (ca + cb) * plane;
      for (size_t i = 0; i < static_cast<size_t>(ca) * plane; ++i)
        ga[static_cast<size_t>(nn) * ca * plane + i] += g[obase + i];
      for (size_t i = 0; i < static_cast<size_t>(cb) * plane; ++i)
        gb[static_cast<size_t>(nn) * cb * plane + i] += g[obase + ca * plane + i];
    }
  };
  return id;
}

namespace {

// saved forward state for the attention backward pass
struct AttentionContext {
  std::shared_ptr<const EpipolarPlan> plan;
  int heads = 1, channels = 0, rows = 0, queries = 0;
  std::vector<double> gathered;  // queries x rows x channels
  std::vector<double> weights;   // queries x heads x rows
  std::vector<double> widened;   // queries x (channels + heads)
  std::vector<uint8_t> any_visible;
};

}  // namespace

int Tape::epipolar_attention(int x, std::shared_ptr<const EpipolarPlan> plan, int fold_w,
                             int fold_b, int heads) {
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 4) throw std::invalid_argument("Tape::epipolar_attention: x must be 4-d");
  const int views = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  if (views != plan->views || h != plan->height || wd != plan->width)
    throw std::invalid_argument("Tape::epipolar_attention: plan mismatch");
  if (heads < 1 || c % heads != 0)
    throw std::invalid_argument("Tape::epipolar_attention: heads must divide channels");
  const int dh = c / heads;
  const int rows = static_cast<int>(plan->rows_per_query());
  const int wide = c + heads;
  if (nodes_[fold_w].value.size() != static_cast<size_t>(c) * wide ||
      nodes_[fold_b].value.size() != static_cast<size_t>(c))
    throw std::invalid_argument("Tape::epipolar_attention: fold shape mismatch");

  const int id = push(xs, nodes_[x].value.size());
  const auto& vx = nodes_[x].value;
  const auto& vfw = nodes_[fold_w].value;
  const auto& vfb = nodes_[fold_b].value;
  auto& out = nodes_[id].value;

  auto ctx = std::make_shared<AttentionContext>();
  ctx->plan = plan;
  ctx->heads = heads;
  ctx->channels = c;
  ctx->rows = rows;
  ctx->queries = views * h * wd;
  ctx->gathered.assign(static_cast<size_t>(ctx->queries) * rows * c, 0.0);
  ctx->weights.assign(static_cast<size_t>(ctx->queries) * heads * rows, 0.0);
  ctx->widened.assign(static_cast<size_t>(ctx->queries) * wide, 0.0);
  ctx->any_visible.assign(ctx->queries, 0);

  const size_t plane = static_cast<size_t>(h) * wd;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> logits(rows);

  int query = 0;
  for (int v = 0; v < views; ++v) {
    for (int y = 0; y < h; ++y) {
      for (int xi = 0; xi < wd; ++xi, ++query) {
        const size_t pix = static_cast<size_t>(y) * wd + xi;
        double* grow = ctx->gathered.data() + static_cast<size_t>(query) * rows * c;
        bool any = false;

        // gather neighbor features for every row
        int row = 0;
        for (int r = 0; r < plan->neighbors; ++r) {
          const int nv = plan->neighbor_view[static_cast<size_t>(v) * plan->neighbors + r];
          const double* nbase = vx.data() + static_cast<size_t>(nv) * c * plane;
          for (int s = 0; s < plan->samples; ++s, ++row) {
            const size_t e = plan->entry(v, y, xi, r, s);
            if (plan->corner[e] < 0) continue;
            const int cb = plan->corner[e];
            double* dst = grow + static_cast<size_t>(row) * c;
            for (int ch = 0; ch < c; ++ch) {
              const double* cp = nbase + static_cast<size_t>(ch) * plane;
              dst[ch] = plan->w00[e] * cp[cb] + plan->w01[e] * cp[cb + 1] +
                        plan->w10[e] * cp[cb + wd] + plan->w11[e] * cp[cb + wd + 1];
            }
            if (plan->visible[e]) any = true;
          }
        }
        ctx->any_visible[query] = any ? 1 : 0;
        if (!any) continue;

        double* widened = ctx->widened.data() + static_cast<size_t>(query) * wide;
        for (int head = 0; head < heads; ++head) {
          const int coff = head * dh;
          double max_logit = kMaskedLogit;
          row = 0;
          for (int r = 0; r < plan->neighbors; ++r) {
            for (int s = 0; s < plan->samples; ++s, ++row) {
              const size_t e = plan->entry(v, y, xi, r, s);
              if (plan->visible[e]) {
                const double* krow = grow + static_cast<size_t>(row) * c + coff;
                double dot = 0.0;
                for (int j = 0; j < dh; ++j)
                  dot += vx[(static_cast<size_t>(v) * c + coff + j) * plane + pix] * krow[j];
                logits[row] = dot * inv_sqrt;
              } else {
                logits[row] = kMaskedLogit;
              }
              max_logit = std::max(max_logit, logits[row]);
            }
          }
          double denom = 0.0;
          double* wrow = ctx->weights.data() +
                         (static_cast<size_t>(query) * heads + head) * rows;
          for (int rr = 0; rr < rows; ++rr) {
            wrow[rr] = std::exp(logits[rr] - max_logit);
            denom += wrow[rr];
          }
          for (int rr = 0; rr < rows; ++rr) wrow[rr] /= denom;

          double* oh = widened + head * (dh + 1);
          for (int rr = 0; rr < rows; ++rr) {
            const double wv = wrow[rr];
            if (wv == 0.0) continue;
            const double* krow = grow + static_cast<size_t>(rr) * c + coff;
            for (int j = 0; j < dh; ++j) oh[j] += wv * krow[j];
          }
          // shared appended depth channel
          row = 0;
          for (int r = 0; r < plan->neighbors; ++r)
            for (int s = 0; s < plan->samples; ++s, ++row) {
              const size_t e = plan->entry(v, y, xi, r, s);
              oh[dh] += wrow[row] * plan->sample_depth[e];
            }
        }

        // fold back to c channels
        for (int ch = 0; ch < c; ++ch) {
          double acc = vfb[ch];
          const double* fw = vfw.data() + static_cast<size_t>(ch) * wide;
          for (int j = 0; j < wide; ++j) acc += fw[j] * widened[j];
          out[(static_cast<size_t>(v) * c + ch) * plane + pix] = acc;
        }
      }
    }
  }

  nodes_[id].backward = [this, id, x, fold_w, fold_b, ctx, views, c, h, wd, dh, rows, wide,
                         plane, inv_sqrt]() {
    const auto& g = nodes_[id].grad;
    const auto& vx = nodes_[x].value;
    const auto& vfw = nodes_[fold_w].value;
    auto& gx = grad_of(x);
    auto& gfw = grad_of(fold_w);
    auto& gfb = grad_of(fold_b);
    const EpipolarPlan& plan = *ctx->plan;
    const int heads = ctx->heads;

    std::vector<double> dwidened(wide), dout_row(rows), dlogits(rows);
    std::vector<double> dgathered(static_cast<size_t>(rows) * c);

    int query = 0;
    for (int v = 0; v < views; ++v) {
      for (int y = 0; y < h; ++y) {
        for (int xi = 0; xi < wd; ++xi, ++query) {
          if (!ctx->any_visible[query]) continue;
          const size_t pix = static_cast<size_t>(y) * wd + xi;
          const double* widened = ctx->widened.data() + static_cast<size_t>(query) * wide;
          const double* grow = ctx->gathered.data() + static_cast<size_t>(query) * rows * c;
          std::fill(dwidened.begin(), dwidened.end(), 0.0);
          std::fill(dgathered.begin(), dgathered.end(), 0.0);

          for (int ch = 0; ch < c; ++ch) {
            const double go = g[(static_cast<size_t>(v) * c + ch) * plane + pix];
            if (go == 0.0) continue;
            gfb[ch] += go;
            const double* fw = vfw.data() + static_cast<size_t>(ch) * wide;
            double* gfwr = gfw.data() + static_cast<size_t>(ch) * wide;
            for (int j = 0; j < wide; ++j) {
              gfwr[j] += go * widened[j];
              dwidened[j] += go * fw[j];
            }
          }

          for (int head = 0; head < heads; ++head) {
            const int coff = head * dh;
            const double* wrow =
                ctx->weights.data() + (static_cast<size_t>(query) * heads + head) * rows;
            const double* dh_out = dwidened.data() + head * (dh + 1);

            // d(weights) and dV from the weighted sum
            double wdot = 0.0;
            int row = 0;
            for (int r = 0; r < plan.neighbors; ++r) {
              for (int s = 0; s < plan.samples; ++s, ++row) {
                const size_t e = plan.entry(v, y, xi, r, s);
                const double* krow = grow + static_cast<size_t>(row) * c + coff;
                double dw = dh_out[dh] * plan.sample_depth[e];
                for (int j = 0; j < dh; ++j) dw += dh_out[j] * krow[j];
                dout_row[row] = dw;
                wdot += wrow[row] * dw;
                if (wrow[row] != 0.0) {
                  double* dg = dgathered.data() + static_cast<size_t>(row) * c + coff;
                  for (int j = 0; j < dh; ++j) dg[j] += wrow[row] * dh_out[j];
                }
              }
            }
            // softmax backward, then into Q and K for visible rows
            row = 0;
            for (int r = 0; r < plan.neighbors; ++r) {
              for (int s = 0; s < plan.samples; ++s, ++row) {
                const size_t e = plan.entry(v, y, xi, r, s);
                if (!plan.visible[e]) continue;  // masked logits are constants
                const double dl = wrow[row] * (dout_row[row] - wdot) * inv_sqrt;
                if (dl == 0.0) continue;
                const double* krow = grow + static_cast<size_t>(row) * c + coff;
                double* dg = dgathered.data() + static_cast<size_t>(row) * c + coff;
                for (int j = 0; j < dh; ++j) {
                  gx[(static_cast<size_t>(v) * c + coff + j) * plane + pix] += dl * krow[j];
                  dg[j] += dl * vx[(static_cast<size_t>(v) * c + coff + j) * plane + pix];
                }
              }
            }
          }

          // scatter gathered-feature gradients through the bilinear corners
          int row = 0;
          for (int r = 0; r < plan.neighbors; ++r) {
            const int nv = plan.neighbor_view[static_cast<size_t>(v) * plan.neighbors + r];
            double* nbase = gx.data() + static_cast<size_t>(nv) * c * plane;
            for (int s = 0; s < plan.samples; ++s, ++row) {
              const size_t e = plan.entry(v, y, xi, r, s);
              if (plan.corner[e] < 0) continue;
              const int cb = plan.corner[e];
              const double* dg = dgathered.data() + static_cast<size_t>(row) * c;
              for (int ch = 0; ch < c; ++ch) {
                if (dg[ch] == 0.0) continue;
                double* cp = nbase + static_cast<size_t>(ch) * plane;
                cp[cb] += plan.w00[e] * dg[ch];
                cp[cb + 1] += plan.w01[e] * dg[ch];
                cp[cb + wd] += plan.w10[e] * dg[ch];
                cp[cb + wd + 1] += plan.w11[e] * dg[ch];
              }
            }
          }
        }
      }
    }
  };
  return id;
}

int Tape::mse(int x, std::span<const double> target) {
  if (nodes_[x].value.size() != target.size())
    throw std::invalid_argument("Tape::mse: target size mismatch");
  const int id = push({1}, 1);
  const auto& vx = nodes_[x].value;
  const size_t m = vx.size();
  double acc = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const double d = vx[i] - target[i];
    acc += d * d;
  }
  nodes_[id].value[0] = acc / static_cast<double>(m);
  auto saved = std::make_shared<std::vector<double>>(target.begin(), target.end());
  nodes_[id].backward = [this, id, x, saved, m]() {
    const double go = nodes_[id].grad[0];
    const auto& vx = nodes_[x].value;
    auto& gx = grad_of(x);
    const double scale = 2.0 * go / static_cast<double>(m);
    for (size_t i = 0; i < m; ++i) gx[i] += scale * (vx[i] - (*saved)[i]);
  };
  return id;
}

void Tape::backward(int id) {
  grad_of(id).assign(nodes_[id].value.size(), 1.0);
  for (int i = id; i >= 0; --i) {
    if (nodes_[i].grad_set && nodes_[i].backward) nodes_[i].backward();
  }
  if (store_) {
    for (const auto& node : nodes_) {
      if (node.param >= 0 && node.grad_set) {
        Parameter& p = store_->at(node.param);
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[i];
      }
    }
  }
}

void positional_encoding(double value, std::span<double> out) {
  const int half = static_cast<int>(out.size()) / 2;
  if (half < 1 || out.size() % 2 != 0)
    throw std::invalid_argument("positional_encoding: dimension must be even and >= 2");
  for (int i = 0; i < half; ++i) {
    const double expo = half > 1 ? static_cast<double>(i) / (half - 1) : 0.0;
    const double freq = std::pow(10000.0, -expo);
    out[i] = std::sin(value * freq);
    out[half + i] = std::cos(value * freq);
  }
}

void AdamOptimizer::step(ParamStore& params) {
  if (m_.empty()) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (int i = 0; i < params.count(); ++i) {
      m_[i].assign(params.at(i).size(), 0.0);
      v_[i].assign(params.at(i).size(), 0.0);
    }
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
  for (int i = 0; i < params.count(); ++i) {
    Parameter& p = params.at(i);
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = beta1 * m[j] + (1.0 - beta1) * g;
      v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
      p.value[j] -= learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
    }
  }
}

}  // namespace mvdd::nn
