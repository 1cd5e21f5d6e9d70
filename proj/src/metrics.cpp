#include "mvdd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mvdd/parallel.hpp"
#include "mvdd/rng.hpp"

namespace mvdd::metrics {

namespace {

double min_sq_dist(const Eigen::Vector3d& p, const PointCloud& cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : cloud.points) best = std::min(best, (p - q).squaredNorm());
  return best;
}

}  // namespace

double chamfer(const PointCloud& x, const PointCloud& y) {
  if (x.points.empty() || y.points.empty())
    throw std::invalid_argument("chamfer: clouds must be nonempty");
  double total = 0.0;
  for (const auto& p : x.points) total += min_sq_dist(p, y);
  for (const auto& q : y.points) total += min_sq_dist(q, x);
  return total;
}

double solve_assignment(std::span<const double> cost, int n) {
  if (n <= 0 || cost.size() != static_cast<size_t>(n) * n)
    throw std::invalid_argument("solve_assignment: bad matrix");
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Jonker-Volgenant style shortest augmenting path; rows are assigned one
  // at a time, potentials keep reduced costs nonnegative.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, -1);  // column -> row
  std::vector<int> way(n + 1, 0);

  for (int row = 0; row < n; ++row) {
    int j0 = n;  // virtual column holding the fresh row
    match[j0] = row;
    std::vector<double> min_slack(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double reduced = cost[static_cast<size_t>(i0) * n + j] - u[i0] - v[j];
        if (reduced < min_slack[j]) {
          min_slack[j] = reduced;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != -1);
    // augment along the found path
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != n);
  }

  double total = 0.0;
  for (int j = 0; j < n; ++j) total += cost[static_cast<size_t>(match[j]) * n + j];
  return total;
}

double emd(const PointCloud& x, const PointCloud& y) {
  if (x.points.empty()) throw std::invalid_argument("emd: clouds must be nonempty");
  if (x.size() != y.size()) throw std::invalid_argument("emd: clouds must have equal size");
  const int n = x.size();
  std::vector<double> cost(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<size_t>(i) * n + j] = (x.points[i] - y.points[j]).norm();
  return solve_assignment(cost, n);
}

double cloud_distance(const PointCloud& x, const PointCloud& y, Distance distance) {
  return distance == Distance::kChamfer ? chamfer(x, y) : emd(x, y);
}

namespace {

std::vector<double> cross_distances(std::span<const PointCloud> gen,
                                    std::span<const PointCloud> ref, Distance distance) {
  std::vector<double> d(gen.size() * ref.size());
  parallel_for(0, static_cast<int>(gen.size()), [&](int i) {
    for (size_t j = 0; j < ref.size(); ++j)
      d[static_cast<size_t>(i) * ref.size() + j] = cloud_distance(gen[i], ref[j], distance);
  });
  return d;
}

}  // namespace

double coverage(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
                Distance distance) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("coverage: empty set");
  const auto d = cross_distances(gen, ref, distance);
  std::vector<char> matched(ref.size(), 0);
  for (size_t i = 0; i < gen.size(); ++i) {
    size_t best = 0;
    for (size_t j = 1; j < ref.size(); ++j)
      if (d[i * ref.size() + j] < d[i * ref.size() + best]) best = j;
    matched[best] = 1;
  }
  size_t count = 0;
  for (char m : matched) count += m;
  return static_cast<double>(count) / static_cast<double>(ref.size());
}

double mmd(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
           Distance distance) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("mmd: empty set");
  const auto d = cross_distances(gen, ref, distance);
  double total = 0.0;
  for (size_t j = 0; j < ref.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < gen.size(); ++i) best = std::min(best, d[i * ref.size() + j]);
    total += best;
  }
  return total / static_cast<double>(ref.size());
}

double one_nna(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
               Distance distance) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("one_nna: empty set");
  const size_t g = gen.size(), r = ref.size();
  const size_t total = g + r;
  // combined ordering: generated set first, then reference
  auto cloud_at = [&](size_t i) -> const PointCloud& {
    return i < g ? gen[i] : ref[i - g];
  };
  std::vector<double> d(total * total, 0.0);
  parallel_for(0, static_cast<int>(total), [&](int ii) {
    const size_t i = static_cast<size_t>(ii);
    for (size_t j = i + 1; j < total; ++j) {
      const double dist = cloud_distance(cloud_at(i), cloud_at(j), distance);
      d[i * total + j] = dist;
      d[j * total + i] = dist;
    }
  });

  size_t correct = 0;
  for (size_t i = 0; i < total; ++i) {
    size_t best = total;
    for (size_t j = 0; j < total; ++j) {
      if (j == i) continue;
      if (best == total || d[i * total + j] < d[i * total + best]) best = j;
      // ties keep the lowest (set, index), which is the lowest combined index
    }
    const bool same_set = (i < g) == (best < g);
    if (same_set) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

SetMetrics evaluate_set(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
                        Distance distance) {
  SetMetrics m;
  m.mmd = mmd(gen, ref, distance);
  m.coverage = coverage(gen, ref, distance);
  m.one_nna = one_nna(gen, ref, distance);
  return m;
}

PointCloud subsample(const PointCloud& cloud, int count, uint64_t seed) {
  if (count < 0 || count > cloud.size())
    throw std::invalid_argument("subsample: count exceeds cloud size");
  std::vector<int> order(cloud.points.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(0, i)]);
  PointCloud out;
  out.points.reserve(count);
  for (int i = 0; i < count; ++i) out.points.push_back(cloud.points[order[i]]);
  return out;
}

}  // namespace mvdd::metrics
