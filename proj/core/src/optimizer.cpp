#include "orchestra/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace orchestra {

void AdamState::apply(const std::vector<ParamView>& views,
                      const AdamConfig& cfg) {
  if (m_.empty()) {
    m_.reserve(views.size());
    v_.reserve(views.size());
    for (const auto& view : views) {
      m_.push_back(Eigen::ArrayXd::Zero(view.size));
      v_.push_back(Eigen::ArrayXd::Zero(view.size));
    }
  }
  if (views.size() != m_.size())
    throw std::invalid_argument("adam: block count mismatch");
  for (std::size_t b = 0; b < views.size(); ++b) {
    if (views[b].size != m_[b].size())
      throw std::invalid_argument("adam: block shape mismatch");
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));

  for (std::size_t b = 0; b < views.size(); ++b) {
    Eigen::Map<Eigen::ArrayXd> p(views[b].value, views[b].size);
    Eigen::Map<const Eigen::ArrayXd> g(views[b].grad, views[b].size);
    m_[b] = cfg.beta1 * m_[b] + (1.0 - cfg.beta1) * g;
    v_[b] = cfg.beta2 * v_[b] + (1.0 - cfg.beta2) * g.square();
    const Eigen::ArrayXd m_hat = m_[b] / bc1;
    const Eigen::ArrayXd v_hat = v_[b] / bc2;
    p -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps));
    if (cfg.weight_decay != 0.0) p -= cfg.lr * cfg.weight_decay * p;
  }
}

void AdamState::restore(std::int64_t t, std::vector<Eigen::ArrayXd> m,
                        std::vector<Eigen::ArrayXd> v) {
  if (m.size() != v.size())
    throw std::invalid_argument("adam restore: moment count mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace orchestra
