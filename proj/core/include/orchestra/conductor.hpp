#pragma once

// The conductor: a linear contextual policy over reward components.  Given a
// trajectory context h it produces
//
//   pi(a | h) = clamp_floor(softmax((W h + b) / tau), eps)
//
// with tau learned through log_temp.  During training an action (component
// index) is sampled per group member and expanded into emphasis weights; at
// evaluation time the full clamped distribution doubles as a continuous
// weighting.

#include <Eigen/Core>

#include "orchestra/numerics.hpp"

namespace orchestra {

struct ConductorParams {
  Eigen::MatrixXd weight;  // K x d
  Eigen::VectorXd bias;    // K
  double log_temp = 0.0;   // tau = exp(log_temp)
  double eps_floor = 1e-4;

  int actions() const noexcept { return static_cast<int>(weight.rows()); }
  int context_dim() const noexcept { return static_cast<int>(weight.cols()); }
  double temperature() const { return std::exp(log_temp); }

  static ConductorParams zeros(int actions, int context_dim,
                               double eps_floor = 1e-4, double temp_init = 1.0);
  std::uint64_t content_hash() const;
};

// Floor-clamped action distribution.
SimplexVector action_distribution(const ConductorParams& params,
                                  const Eigen::VectorXd& context);

// Same distribution before the floor; the REINFORCE gradient treats the
// clamp as identity and differentiates this one.
SimplexVector action_distribution_preclamp(const ConductorParams& params,
                                           const Eigen::VectorXd& context);

int sample_action(const ConductorParams& params, const Eigen::VectorXd& context,
                  RandomStream& rng);

enum class EmphasisMode { OneHot, Softened };

struct EmphasisConfig {
  EmphasisMode mode = EmphasisMode::OneHot;
  double soften_delta = 1.0;  // Softened: (1-delta)/K everywhere + delta on a
};

SimplexVector emphasis_weights(int action, const EmphasisConfig& cfg,
                               int num_components);

// Evaluation-time continuous weights; identical to action_distribution.
// Never used inside the training loop.
SimplexVector inference_weights(const ConductorParams& params,
                                const Eigen::VectorXd& context);

}  // namespace orchestra
