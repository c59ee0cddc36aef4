#pragma once

// Decoupled-weight-decay adaptive-moment optimizer (AdamW) over flat views
// of parameter blocks.  Both the policy and the conductor route their blocks
// through the same kernel.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace orchestra {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct ParamView {
  double* value;
  const double* grad;
  Eigen::Index size;
};

// First/second moment accumulators plus the step counter.  Block shapes are
// fixed on the first apply(); a later mismatch is an invalid_argument.
class AdamState {
 public:
  void apply(const std::vector<ParamView>& views, const AdamConfig& cfg);

  std::int64_t step_count() const noexcept { return t_; }
  const std::vector<Eigen::ArrayXd>& first_moments() const { return m_; }
  const std::vector<Eigen::ArrayXd>& second_moments() const { return v_; }

  // Checkpoint restore.
  void restore(std::int64_t t, std::vector<Eigen::ArrayXd> m,
               std::vector<Eigen::ArrayXd> v);

 private:
  std::vector<Eigen::ArrayXd> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace orchestra
