#pragma once

// Conductor training: advantage-weighted REINFORCE with entropy
// regularization over buffered (context, action, advantage) transitions.
//
// The ascent objective per batch is
//
//   J(phi) = (1/N) sum_i [ adv_i * log pi_phi(a_i | h_i)
//                          + lambda_ent * H(pi_phi(. | h_i)) ]
//
// evaluated on the pre-clamp softmax (straight-through treatment of the
// probability floor).  meta_update takes one adaptive-moment step on -J.

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

#include "orchestra/conductor.hpp"
#include "orchestra/optimizer.hpp"
#include "orchestra/rewards.hpp"

namespace orchestra {

struct MetaTransition {
  Eigen::VectorXd context;
  int action = 0;
  double advantage = 0.0;
};

// FIFO transition store; drained whole at each update.
class MetaBuffer {
 public:
  void push(std::span<const MetaTransition> transitions);
  std::vector<MetaTransition> drain();
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

 private:
  std::vector<MetaTransition> items_;
};

struct ConductorGradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  double log_temp = 0.0;

  static ConductorGradient zeros(int actions, int context_dim);
  double norm() const;
};

// Value of J(phi) on a batch; the finite-difference oracle target.
double meta_objective(const ConductorParams& params,
                      std::span<const MetaTransition> batch,
                      double entropy_coeff);

// Exact ascent gradient of meta_objective.
ConductorGradient meta_gradient(const ConductorParams& params,
                                std::span<const MetaTransition> batch,
                                double entropy_coeff);

struct MetaUpdateLog {
  int update_index = 0;
  int batch_size = 0;
  double grad_norm = 0.0;
  double mean_entropy = 0.0;  // clamped policy entropy over batch contexts
  std::array<double, kNumRewardComponents> action_freq{};
};

struct MetaConfig {
  int update_interval = 3;     // GRPO steps between updates (async mode)
  bool joint = false;          // update every step from that step's batch
  double entropy_coeff = 1e-3;
  AdamConfig adam{.lr = 5e-5};
};

// Drains the buffer and applies one ascent step.  An empty buffer is a
// no-op: the conductor and optimizer state stay untouched.
MetaUpdateLog meta_update(ConductorParams& params, MetaBuffer& buffer,
                          const MetaConfig& cfg, AdamState& opt,
                          int update_index);

}  // namespace orchestra
