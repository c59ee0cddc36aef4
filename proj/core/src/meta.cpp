#include "orchestra/meta.hpp"

#include <cmath>
#include <stdexcept>

namespace orchestra {

void MetaBuffer::push(std::span<const MetaTransition> transitions) {
  items_.insert(items_.end(), transitions.begin(), transitions.end());
}

std::vector<MetaTransition> MetaBuffer::drain() {
  std::vector<MetaTransition> out;
  out.swap(items_);
  return out;
}

ConductorGradient ConductorGradient::zeros(int actions, int context_dim) {
  ConductorGradient g;
  g.weight = Eigen::MatrixXd::Zero(actions, context_dim);
  g.bias = Eigen::VectorXd::Zero(actions);
  g.log_temp = 0.0;
  return g;
}

double ConductorGradient::norm() const {
  return std::sqrt(weight.squaredNorm() + bias.squaredNorm() +
                   log_temp * log_temp);
}

double meta_objective(const ConductorParams& params,
                      std::span<const MetaTransition> batch,
                      double entropy_coeff) {
  if (batch.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& tr : batch) {
    if (tr.action < 0 || tr.action >= params.actions())
      throw std::invalid_argument("meta: action out of range");
    SimplexVector p = action_distribution_preclamp(params, tr.context);
    acc += tr.advantage * std::log(std::max(p[tr.action], 1e-300));
    if (entropy_coeff != 0.0) acc += entropy_coeff * categorical_entropy(p);
  }
  return acc / static_cast<double>(batch.size());
}

ConductorGradient meta_gradient(const ConductorParams& params,
                                std::span<const MetaTransition> batch,
                                double entropy_coeff) {
  ConductorGradient grad =
      ConductorGradient::zeros(params.actions(), params.context_dim());
  if (batch.empty()) return grad;
  const double tau = params.temperature();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const auto& tr : batch) {
    if (tr.action < 0 || tr.action >= params.actions())
      throw std::invalid_argument("meta: action out of range");
    if (tr.context.size() != params.context_dim())
      throw std::invalid_argument("meta: context dimension mismatch");
    const Eigen::VectorXd z =
        (params.weight * tr.context + params.bias) / tau;
    const SimplexVector p = stable_softmax(z, 1.0);

    // d(adv * log p[a])/dz = adv * (e_a - p)
    Eigen::VectorXd dz = -tr.advantage * p.probs();
    dz(tr.action) += tr.advantage;

    if (entropy_coeff != 0.0) {
      // dH/dz_k = -p_k (log p_k + H)
      const double h = categorical_entropy(p);
      for (int k = 0; k < p.size(); ++k) {
        const double pk = p[k];
        const double logp = pk > 0.0 ? std::log(pk) : 0.0;
        dz(k) += entropy_coeff * (-pk * (logp + h));
      }
    }

    grad.weight.noalias() += (inv_n / tau) * (dz * tr.context.transpose());
    grad.bias += (inv_n / tau) * dz;
    // z = (W h + b) * exp(-log_temp)  =>  dz/dlog_temp = -z
    grad.log_temp += inv_n * (-dz.dot(z));
  }
  return grad;
}

MetaUpdateLog meta_update(ConductorParams& params, MetaBuffer& buffer,
                          const MetaConfig& cfg, AdamState& opt,
                          int update_index) {
  MetaUpdateLog log;
  log.update_index = update_index;
  const std::vector<MetaTransition> batch = buffer.drain();
  log.batch_size = static_cast<int>(batch.size());
  if (batch.empty()) return log;

  for (const auto& tr : batch) {
    log.mean_entropy +=
        categorical_entropy(action_distribution(params, tr.context));
    log.action_freq[static_cast<std::size_t>(tr.action)] += 1.0;
  }
  log.mean_entropy /= static_cast<double>(batch.size());
  for (auto& f : log.action_freq) f /= static_cast<double>(batch.size());

  const ConductorGradient ascent =
      meta_gradient(params, batch, cfg.entropy_coeff);
  log.grad_norm = ascent.norm();

  // Adam minimizes, so feed it -J's gradient.
  const Eigen::MatrixXd neg_w = -ascent.weight;
  const Eigen::VectorXd neg_b = -ascent.bias;
  const double neg_lt = -ascent.log_temp;
  std::vector<ParamView> views = {
      {params.weight.data(), neg_w.data(), params.weight.size()},
      {params.bias.data(), neg_b.data(), params.bias.size()},
      {&params.log_temp, &neg_lt, 1},
  };
  opt.apply(views, cfg.adam);
  return log;
}

}  // namespace orchestra
