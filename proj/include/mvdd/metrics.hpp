#pragma once

#include <span>
#include <vector>

#include "mvdd/geometry.hpp"

namespace mvdd::metrics {

// CD(X, Y) = sum_x min_y ||x-y||^2 + sum_y min_x ||x-y||^2 (sums, squared)
double chamfer(const PointCloud& x, const PointCloud& y);

// EMD(X, Y) = min over bijections of sum ||x - gamma(x)||, exact assignment
double emd(const PointCloud& x, const PointCloud& y);

enum class Distance { kChamfer, kEmd };

double cloud_distance(const PointCloud& x, const PointCloud& y, Distance distance);

// |{argmin_{Y in ref} D(X, Y) : X in gen}| / |ref|
double coverage(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
                Distance distance);

// (1/|ref|) sum_{Y in ref} min_{X in gen} D(X, Y)
double mmd(std::span<const PointCloud> gen, std::span<const PointCloud> ref, Distance distance);

// leave-one-out 1-NN accuracy over the union; distance ties break to the
// lowest (set, index) with the generated set ordered first
double one_nna(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
               Distance distance);

struct SetMetrics {
  double mmd = 0.0;
  double coverage = 0.0;
  double one_nna = 0.0;
};

SetMetrics evaluate_set(std::span<const PointCloud> gen, std::span<const PointCloud> ref,
                        Distance distance);

// seeded uniform subsample without replacement
PointCloud subsample(const PointCloud& cloud, int count, uint64_t seed);

// exact minimum-cost perfect matching on an n x n cost matrix (row-major),
// shortest augmenting path with potentials
double solve_assignment(std::span<const double> cost, int n);

}  // namespace mvdd::metrics
