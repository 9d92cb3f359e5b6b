#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// being checked.

#include "dcnpd/data.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace dcnpd::oracle {

/// Sorts every training row by (squared distance, row index) and takes the
/// first k rows of each arm in that order.
inline double brute_force_knn_ite(const ObservationalDataset& train, const Vector& x, std::size_t k) {
  std::vector<std::pair<double, Eigen::Index>> all;
  for (Eigen::Index i = 0; i < train.X.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < train.X.cols(); ++j) {
      const double d = train.X(i, j) - x(j);
      s += d * d;
    }
    all.emplace_back(s, i);
  }
  std::sort(all.begin(), all.end());
  double sum[2] = {0.0, 0.0};
  std::size_t taken[2] = {0, 0};
  for (const auto& [dist, i] : all) {
    const int arm = train.W(i);
    if (taken[arm] < k) {
      sum[arm] += train.Y(i);
      ++taken[arm];
    }
  }
  return sum[1] / static_cast<double>(k) - sum[0] / static_cast<double>(k);
}

/// Central difference of a scalar function of one real.
inline double central_difference(const std::function<double(double)>& f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

/// Hand-rolled Adam on a scalar for `steps` steps with a constant gradient.
inline double scalar_adam(double theta, double grad, int steps, double lr = 1e-3, double b1 = 0.9,
                          double b2 = 0.999, double eps = 1e-8) {
  double m = 0.0, v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad * grad;
    const double mh = m / (1.0 - std::pow(b1, t));
    const double vh = v / (1.0 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
  }
  return theta;
}

}  // namespace dcnpd::oracle
