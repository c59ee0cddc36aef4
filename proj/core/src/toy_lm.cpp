#include "orchestra/toy_lm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace orchestra {

namespace {

void check_tokens(std::span<const Token> toks, int vocab, const char* what) {
  for (Token t : toks) {
    if (t < 0 || t >= vocab)
      throw std::invalid_argument(std::string(what) + ": token out of range");
  }
}

Eigen::VectorXd step_state(const PolicyParams& p, const Eigen::VectorXd& s,
                           Token tok) {
  return (p.recur * s + p.input * p.embed.row(tok).transpose())
      .array()
      .tanh()
      .matrix();
}

Eigen::VectorXd logits_at(const PolicyParams& p, const Eigen::VectorXd& s) {
  return p.out * s + p.out_bias;
}

constexpr double kTinyProb = 1e-300;  // log() guard for degenerate softmax mass

}  // namespace

PolicyParams PolicyParams::zeros(int vocab, int width) {
  if (vocab <= 0 || width <= 0)
    throw std::invalid_argument("policy: dimensions must be positive");
  PolicyParams p;
  p.embed = Eigen::MatrixXd::Zero(vocab, width);
  p.recur = Eigen::MatrixXd::Zero(width, width);
  p.input = Eigen::MatrixXd::Zero(width, width);
  p.out = Eigen::MatrixXd::Zero(vocab, width);
  p.out_bias = Eigen::VectorXd::Zero(vocab);
  return p;
}

PolicyParams PolicyParams::random_init(int vocab, int width, double scale,
                                       RandomStream rng) {
  PolicyParams p = zeros(vocab, width);
  auto fill = [&rng](Eigen::MatrixXd& m, double sd) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        m(r, c) = sd * rng.next_gaussian();
  };
  fill(p.embed, scale);
  fill(p.input, scale);
  fill(p.out, scale);
  // Keep the recurrence contractive-ish so states neither die nor saturate.
  fill(p.recur, scale / std::sqrt(static_cast<double>(width)));
  return p;
}

bool PolicyParams::all_finite() const {
  return embed.allFinite() && recur.allFinite() && input.allFinite() &&
         out.allFinite() && out_bias.allFinite();
}

bool PolicyParams::same_shape(const PolicyParams& o) const {
  return embed.rows() == o.embed.rows() && embed.cols() == o.embed.cols();
}

std::uint64_t PolicyParams::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const double* d, Eigen::Index n) {
    h = fnv1a_bytes(d, static_cast<std::size_t>(n) * sizeof(double), h);
  };
  mix(embed.data(), embed.size());
  mix(recur.data(), recur.size());
  mix(input.data(), input.size());
  mix(out.data(), out.size());
  mix(out_bias.data(), out_bias.size());
  return h;
}

HiddenTrace encode(const PolicyParams& params, std::span<const Token> prompt,
                   std::span<const Token> response) {
  check_tokens(prompt, params.vocab(), "encode prompt");
  check_tokens(response, params.vocab(), "encode response");
  HiddenTrace trace;
  trace.states.reserve(prompt.size() + response.size() + 1);
  trace.states.push_back(Eigen::VectorXd::Zero(params.width()));
  for (Token t : prompt)
    trace.states.push_back(step_state(params, trace.states.back(), t));
  trace.boundary_index = static_cast<int>(prompt.size());
  for (Token t : response)
    trace.states.push_back(step_state(params, trace.states.back(), t));
  return trace;
}

Eigen::VectorXd extract_context(const HiddenTrace& trace,
                                ContextPosition pos) {
  if (trace.states.empty())
    throw std::invalid_argument("extract_context: empty trace");
  const std::size_t last = trace.states.size() - 1;
  switch (pos) {
    case ContextPosition::First:
      return trace.states[std::min<std::size_t>(1, last)];
    case ContextPosition::Middle:
      return trace.states[last / 2];
    case ContextPosition::Last:
    default:
      return trace.states[last];
  }
}

Trajectory sample_response(const PolicyParams& params, const TokenSeq& prompt,
                           int max_len, double temp, Token stop_token,
                           RandomStream rng) {
  if (max_len <= 0)
    throw std::invalid_argument("sample_response: max_len must be positive");
  Trajectory traj;
  traj.prompt = prompt;
  traj.trace = encode(params, prompt, {});
  Eigen::VectorXd s = traj.trace.states.back();
  for (int i = 0; i < max_len; ++i) {
    SimplexVector dist = stable_softmax(logits_at(params, s), temp);
    const Token tok = static_cast<Token>(rng.next_categorical(dist));
    traj.logprobs.push_back(std::log(std::max(dist[tok], kTinyProb)));
    traj.entropies.push_back(categorical_entropy(dist));
    traj.response.push_back(tok);
    s = step_state(params, s, tok);
    traj.trace.states.push_back(s);
    if (tok == stop_token) break;
  }
  traj.truncated = static_cast<int>(traj.response.size()) == max_len &&
                   traj.response.back() != stop_token;
  return traj;
}

std::vector<double> response_logprobs(const PolicyParams& params,
                                      std::span<const Token> conditioning,
                                      std::span<const Token> target) {
  check_tokens(conditioning, params.vocab(), "logprobs conditioning");
  check_tokens(target, params.vocab(), "logprobs target");
  std::vector<double> out;
  out.reserve(target.size());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(params.width());
  for (Token t : conditioning) s = step_state(params, s, t);
  for (Token t : target) {
    SimplexVector dist = stable_softmax(logits_at(params, s), 1.0);
    out.push_back(std::log(std::max(dist[t], kTinyProb)));
    s = step_state(params, s, t);
  }
  return out;
}

double sequence_nll(const PolicyParams& params,
                    std::span<const Token> conditioning,
                    std::span<const Token> target) {
  if (target.empty())
    throw std::invalid_argument("sequence_nll: empty target");
  const std::vector<double> lp = response_logprobs(params, conditioning, target);
  double acc = 0.0;
  for (double v : lp) acc += v;
  return -acc / static_cast<double>(lp.size());
}

std::vector<double> token_entropies(const PolicyParams& params,
                                    std::span<const Token> conditioning,
                                    std::span<const Token> target,
                                    double temp) {
  check_tokens(conditioning, params.vocab(), "entropies conditioning");
  check_tokens(target, params.vocab(), "entropies target");
  std::vector<double> out;
  out.reserve(target.size());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(params.width());
  for (Token t : conditioning) s = step_state(params, s, t);
  for (Token t : target) {
    out.push_back(categorical_entropy(stable_softmax(logits_at(params, s), temp)));
    s = step_state(params, s, t);
  }
  return out;
}

double kl_penalty(const PolicyParams& theta, const PolicyParams& theta_ref,
                  const Trajectory& traj) {
  if (traj.response.empty()) return 0.0;
  const auto lp = response_logprobs(theta, traj.prompt, traj.response);
  const auto lp_ref = response_logprobs(theta_ref, traj.prompt, traj.response);
  double acc = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) acc += lp[i] - lp_ref[i];
  return acc / static_cast<double>(lp.size());
}

namespace {

// Response tokens counted into the 1/N_tok normalizer.
std::size_t countable_tokens(std::span<const AdvantageSample> batch,
                             bool mask_truncated) {
  std::size_t n = 0;
  for (const auto& s : batch) {
    if (mask_truncated && s.trajectory->truncated) continue;
    n += s.trajectory->response.size();
  }
  return n;
}

}  // namespace

double policy_loss(const PolicyParams& params,
                   std::span<const AdvantageSample> batch, double beta,
                   const PolicyParams& theta_ref, bool mask_truncated) {
  const std::size_t n_tok = countable_tokens(batch, mask_truncated);
  if (n_tok == 0) return 0.0;
  double loss = 0.0;
  for (const auto& s : batch) {
    const Trajectory& traj = *s.trajectory;
    if (mask_truncated && traj.truncated) continue;
    if (traj.response.empty()) continue;
    const auto lp = response_logprobs(params, traj.prompt, traj.response);
    double sum_lp = 0.0;
    for (double v : lp) sum_lp += v;
    loss += (beta - s.advantage) * sum_lp;
    if (beta != 0.0) {
      const auto lp_ref =
          response_logprobs(theta_ref, traj.prompt, traj.response);
      double sum_ref = 0.0;
      for (double v : lp_ref) sum_ref += v;
      loss -= beta * sum_ref;
    }
  }
  return loss / static_cast<double>(n_tok);
}

PolicyGradient policy_gradient(const PolicyParams& params,
                               std::span<const AdvantageSample> batch,
                               double beta, const PolicyParams& theta_ref,
                               bool mask_truncated) {
  (void)theta_ref;  // enters the loss only through a theta-independent term
  PolicyGradient grad = PolicyParams::zeros(params.vocab(), params.width());
  const std::size_t n_tok = countable_tokens(batch, mask_truncated);
  if (n_tok == 0) return grad;
  const double inv_n = 1.0 / static_cast<double>(n_tok);

  for (const auto& sample : batch) {
    const Trajectory& traj = *sample.trajectory;
    if (mask_truncated && traj.truncated) continue;
    if (traj.response.empty()) continue;

    const std::size_t m = traj.prompt.size();
    const std::size_t n = traj.response.size();
    const std::size_t total = m + n;
    const double coeff = (beta - sample.advantage) * inv_n;

    // Forward pass under `params` (the recorded trace may belong to another
    // parameter point).
    HiddenTrace trace = encode(params, traj.prompt, traj.response);
    const auto& s = trace.states;  // s[0..total]

    std::vector<Eigen::VectorXd> ds(
        total + 1, Eigen::VectorXd::Zero(params.width()));

    // Readout heads: response token j (0-based) is scored from state s[m+j].
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t t = m + j;
      const Token y = traj.response[j];
      SimplexVector p = stable_softmax(logits_at(params, s[t]), 1.0);
      // L accumulates coeff * log p[y], so dL/dz = coeff * (e_y - p).
      Eigen::VectorXd dz = -coeff * p.probs();
      dz(y) += coeff;
      grad.out.noalias() += dz * s[t].transpose();
      grad.out_bias += dz;
      ds[t] += params.out.transpose() * dz;
    }

    // Backward through the recurrence.  The terminal state feeds no head, so
    // ds[total] stays zero and contributes nothing.
    for (std::size_t t = total; t >= 1; --t) {
      const Token u = t <= m ? traj.prompt[t - 1] : traj.response[t - 1 - m];
      const Eigen::VectorXd da =
          (ds[t].array() * (1.0 - s[t].array().square())).matrix();
      grad.recur.noalias() += da * s[t - 1].transpose();
      grad.input.noalias() += da * params.embed.row(u);
      grad.embed.row(u) += (params.input.transpose() * da).transpose();
      ds[t - 1] += params.recur.transpose() * da;
    }
  }
  return grad;
}

void apply_update(PolicyParams& params, const PolicyGradient& grad,
                  AdamState& state, const AdamConfig& cfg) {
  if (!params.same_shape(grad) || params.out.rows() != grad.out.rows())
    throw std::invalid_argument("apply_update: shape mismatch");
  std::vector<ParamView> views = {
      {params.embed.data(), grad.embed.data(), params.embed.size()},
      {params.recur.data(), grad.recur.data(), params.recur.size()},
      {params.input.data(), grad.input.data(), params.input.size()},
      {params.out.data(), grad.out.data(), params.out.size()},
      {params.out_bias.data(), grad.out_bias.data(), params.out_bias.size()},
  };
  state.apply(views, cfg);
}

void sync_reference(PolicyParams& theta_ref, const PolicyParams& theta,
                    double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("sync_reference: alpha outside [0, 1]");
  if (!theta_ref.same_shape(theta) ||
      theta_ref.out.rows() != theta.out.rows())
    throw std::invalid_argument("sync_reference: shape mismatch");
  const double b = 1.0 - alpha;
  theta_ref.embed = alpha * theta_ref.embed + b * theta.embed;
  theta_ref.recur = alpha * theta_ref.recur + b * theta.recur;
  theta_ref.input = alpha * theta_ref.input + b * theta.input;
  theta_ref.out = alpha * theta_ref.out + b * theta.out;
  theta_ref.out_bias = alpha * theta_ref.out_bias + b * theta.out_bias;
}

}  // namespace orchestra
