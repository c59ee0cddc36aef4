#pragma once

// Shared test machinery: tolerance helpers, central finite differences,
// rank statistics, and frozen chi-square critical values.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "orchestra/numerics.hpp"

namespace testsup {

// Relative error with an absolute floor, so near-zero expected values do not
// blow the quotient up.
inline double rel_err(double got, double want, double floor_abs = 1e-12) {
  const double denom =
      std::max({std::abs(got), std::abs(want), floor_abs});
  return std::abs(got - want) / denom;
}

// Central difference d f / d slot at step h.  Restores the slot afterwards.
template <class F>
double central_diff(double& slot, double h, F&& f) {
  const double x0 = slot;
  slot = x0 + h;
  const double fp = f();
  slot = x0 - h;
  const double fm = f();
  slot = x0;
  return (fp - fm) / (2.0 * h);
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (denom == 0.0) return 0.0;
  return (da * db).sum() / denom;
}

// Spearman rank correlation via the shared rank transform (ties get the
// mean rank, matching the reward normalizer's convention).
inline double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return pearson(orchestra::rank_normalize(a), orchestra::rank_normalize(b));
}

// 99th-percentile chi-square critical values (alpha = 0.01).
inline constexpr double kChi2At99Df2 = 9.2103;
inline constexpr double kChi2At99Df4 = 13.2767;
inline constexpr double kChi2At99Df7 = 18.4753;

// Pearson goodness-of-fit statistic for observed counts against expected
// probabilities.
inline double chi_square_stat(const std::vector<int>& counts,
                              const std::vector<double>& probs) {
  double n = 0.0;
  for (int c : counts) n += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double expect = n * probs[i];
    const double diff = counts[i] - expect;
    stat += diff * diff / expect;
  }
  return stat;
}

}  // namespace testsup
