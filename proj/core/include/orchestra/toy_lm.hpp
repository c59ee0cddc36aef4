#pragma once

// Tiny autoregressive policy: a single tanh recurrence over learned token
// embeddings with a linear readout.
//
//   s_0 = 0,   s_t = tanh(A s_{t-1} + B E[u_t]),   logits_t = C s_t + c
//
// Gradients are derived by hand (backpropagation through time); there is no
// autodiff anywhere in this project.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "orchestra/numerics.hpp"
#include "orchestra/optimizer.hpp"

namespace orchestra {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct PolicyParams {
  Eigen::MatrixXd embed;     // V x d   (E)
  Eigen::MatrixXd recur;     // d x d   (A)
  Eigen::MatrixXd input;     // d x d   (B)
  Eigen::MatrixXd out;       // V x d   (C)
  Eigen::VectorXd out_bias;  // V       (c)

  int vocab() const noexcept { return static_cast<int>(embed.rows()); }
  int width() const noexcept { return static_cast<int>(embed.cols()); }

  static PolicyParams zeros(int vocab, int width);
  static PolicyParams random_init(int vocab, int width, double scale,
                                  RandomStream rng);

  bool all_finite() const;
  bool same_shape(const PolicyParams& o) const;
  std::uint64_t content_hash() const;
};

// Gradients share the parameter layout.
using PolicyGradient = PolicyParams;

// Hidden states along one sequence.  states[0] is the initial zero state;
// states[boundary_index] is the state after the final prompt token, and
// states.back() the terminal state after the final response token.
struct HiddenTrace {
  std::vector<Eigen::VectorXd> states;
  int boundary_index = 0;
};

enum class ContextPosition { First, Middle, Last };

struct Trajectory {
  TokenSeq prompt;
  TokenSeq response;
  std::vector<double> logprobs;   // log-prob of each sampled token at the
                                  // sampling temperature
  std::vector<double> entropies;  // entropy of each sampling distribution
  HiddenTrace trace;
  bool truncated = false;
};

// Runs the recurrence over prompt then response.  Token ids must lie in
// [0, V).
HiddenTrace encode(const PolicyParams& params, std::span<const Token> prompt,
                   std::span<const Token> response);

// Conductor input: terminal state, state after the first consumed token, or
// the state at position floor(T/2).
Eigen::VectorXd extract_context(const HiddenTrace& trace, ContextPosition pos);

// Autoregressive sampling at `temp` until `stop_token` or max_len tokens.
// The stop token, when drawn, is part of the response.  truncated is set
// when the length cap fires first.
Trajectory sample_response(const PolicyParams& params,
                           const TokenSeq& prompt, int max_len, double temp,
                           Token stop_token, RandomStream rng);

// Per-token log-probabilities of `target` given `conditioning`, teacher
// forced at temperature 1.
std::vector<double> response_logprobs(const PolicyParams& params,
                                      std::span<const Token> conditioning,
                                      std::span<const Token> target);

// Mean negative log-likelihood of `target` given `conditioning` at
// temperature 1.  Target must be nonempty.
double sequence_nll(const PolicyParams& params,
                    std::span<const Token> conditioning,
                    std::span<const Token> target);

// Entropy of the model's predictive distribution at each position of
// `target`, teacher forced at temperature `temp`.  Measurement helper.
std::vector<double> token_entropies(const PolicyParams& params,
                                    std::span<const Token> conditioning,
                                    std::span<const Token> target, double temp);

// Per-token estimator (1/|y|) sum_t [log pi_theta(y_t) - log pi_ref(y_t)] at
// temperature 1 on the trajectory's response.  Can be negative; its
// expectation over on-policy samples is a KL divergence, hence >= 0.
double kl_penalty(const PolicyParams& theta, const PolicyParams& theta_ref,
                  const Trajectory& traj);

struct AdvantageSample {
  const Trajectory* trajectory;
  double advantage;
};

// Scalar objective the policy gradient differentiates:
//
//   L = (1/N_tok) sum_traj sum_t [ (beta - A_traj) log pi_theta(y_t)
//                                  - beta log pi_ref(y_t) ]
//
// over unmasked trajectories, where N_tok counts their response tokens.
// With beta = 0 this is the plain advantage-weighted surrogate; beta > 0
// adds the per-token KL estimator (loss-term fusion).  Truncated
// trajectories are excluded entirely when mask_truncated is set.
double policy_loss(const PolicyParams& params,
                   std::span<const AdvantageSample> batch, double beta,
                   const PolicyParams& theta_ref, bool mask_truncated);

// Exact gradient of policy_loss via BPTT.  States are recomputed from
// `params`, so the result is valid for any parameter point, not just the
// one that produced the trajectories.
PolicyGradient policy_gradient(const PolicyParams& params,
                               std::span<const AdvantageSample> batch,
                               double beta, const PolicyParams& theta_ref,
                               bool mask_truncated);

// One AdamW step in place.
void apply_update(PolicyParams& params, const PolicyGradient& grad,
                  AdamState& state, const AdamConfig& cfg);

// theta_ref' = alpha * theta_ref + (1 - alpha) * theta, elementwise.
void sync_reference(PolicyParams& theta_ref, const PolicyParams& theta,
                    double alpha);

}  // namespace orchestra
