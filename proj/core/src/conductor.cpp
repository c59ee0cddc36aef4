#include "orchestra/conductor.hpp"

#include <cmath>
#include <stdexcept>

namespace orchestra {

ConductorParams ConductorParams::zeros(int actions, int context_dim,
                                       double eps_floor, double temp_init) {
  if (actions <= 0 || context_dim <= 0)
    throw std::invalid_argument("conductor: dimensions must be positive");
  if (!(temp_init > 0.0))
    throw std::invalid_argument("conductor: temp_init must be positive");
  ConductorParams p;
  p.weight = Eigen::MatrixXd::Zero(actions, context_dim);
  p.bias = Eigen::VectorXd::Zero(actions);
  p.log_temp = std::log(temp_init);
  p.eps_floor = eps_floor;
  return p;
}

std::uint64_t ConductorParams::content_hash() const {
  std::uint64_t h = fnv1a_bytes(weight.data(),
                                static_cast<std::size_t>(weight.size()) *
                                    sizeof(double));
  h = fnv1a_bytes(bias.data(),
                  static_cast<std::size_t>(bias.size()) * sizeof(double), h);
  h = fnv1a_bytes(&log_temp, sizeof(log_temp), h);
  return h;
}

SimplexVector action_distribution_preclamp(const ConductorParams& params,
                                           const Eigen::VectorXd& context) {
  if (context.size() != params.weight.cols())
    throw std::invalid_argument("conductor: context dimension mismatch");
  const Eigen::VectorXd logits = params.weight * context + params.bias;
  return stable_softmax(logits, params.temperature());
}

SimplexVector action_distribution(const ConductorParams& params,
                                  const Eigen::VectorXd& context) {
  return clamp_floor(action_distribution_preclamp(params, context),
                     params.eps_floor);
}

int sample_action(const ConductorParams& params,
                  const Eigen::VectorXd& context, RandomStream& rng) {
  return rng.next_categorical(action_distribution(params, context));
}

SimplexVector emphasis_weights(int action, const EmphasisConfig& cfg,
                               int num_components) {
  if (action < 0 || action >= num_components)
    throw std::invalid_argument("emphasis_weights: action out of range");
  if (cfg.mode == EmphasisMode::OneHot)
    return SimplexVector::one_hot(num_components, action);
  const double delta = cfg.soften_delta;
  if (!(delta >= 0.0 && delta <= 1.0))
    throw std::invalid_argument("emphasis_weights: delta outside [0, 1]");
  Eigen::VectorXd w = Eigen::VectorXd::Constant(
      num_components, (1.0 - delta) / num_components);
  w(action) += delta;
  return SimplexVector::unchecked(std::move(w));
}

SimplexVector inference_weights(const ConductorParams& params,
                                const Eigen::VectorXd& context) {
  return action_distribution(params, context);
}

}  // namespace orchestra
