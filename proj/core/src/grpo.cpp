#include "orchestra/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace orchestra {

double scalarize(const SimplexVector& weights, const RewardVector& rewards,
                 double beta, double kl) {
  if (weights.size() != kNumRewardComponents) {
    throw std::invalid_argument("scalarize: weight size mismatch");
  }
  const auto r = rewards.as_array();
  double acc = 0.0;
  for (int k = 0; k < kNumRewardComponents; ++k) acc += weights[k] * r[k];
  return acc - beta * kl;
}

Eigen::VectorXd group_advantages(const Eigen::VectorXd& rewards) {
  const Eigen::Index n = rewards.size();
  if (n < 2) throw std::invalid_argument("group_advantages: need two members");
  if (!rewards.allFinite()) {
    throw std::invalid_argument("group_advantages: non-finite reward");
  }
  bool all_equal = true;
  for (Eigen::Index j = 1; j < n; ++j) {
    if (rewards[j] != rewards[0]) {
      all_equal = false;
      break;
    }
  }
  // Identical rewards carry no ranking information; the quotient below
  // would give tiny noise-amplified values instead of zero.
  if (all_equal) return Eigen::VectorXd::Zero(n);
  const double mean = rewards.mean();
  const double var = (rewards.array() - mean).square().mean();
  const double denom = std::sqrt(var) + 1e-6;
  return (rewards.array() - mean) / denom;
}

WeightSource WeightSource::conductor() {
  WeightSource s;
  s.kind = WeightSourceKind::ConductorSample;
  return s;
}

WeightSource WeightSource::fixed_weights(SimplexVector w) {
  if (w.size() != kNumRewardComponents) {
    throw std::invalid_argument("fixed_weights: wrong component count");
  }
  WeightSource s;
  s.kind = WeightSourceKind::Fixed;
  s.fixed = std::move(w);
  return s;
}

WeightSource WeightSource::random_simplex() {
  WeightSource s;
  s.kind = WeightSourceKind::RandomSimplex;
  return s;
}

GroupResult run_group(const PolicyParams& policy, const PolicyParams& ref,
                      const PromptInstance& inst,
                      const ConductorParams* conductor,
                      const WeightSource& source, const PrefScorer& scorer,
                      const GroupConfig& cfg, const RandomStream& group_rng) {
  if (cfg.group_size < 1) throw std::invalid_argument("group_size < 1");
  if (source.kind == WeightSourceKind::ConductorSample && conductor == nullptr) {
    throw std::invalid_argument("conductor weight source without a conductor");
  }

  GroupResult out;
  out.instance = &inst;

  const int g = cfg.group_size;
  out.members.resize(g);

  // Roll out and assign emphasis per member.  The conductor reads each
  // member's own trajectory state, not a shared prompt encoding: the action
  // must be able to depend on what the response actually looks like.
  for (int j = 0; j < g; ++j) {
    MemberOutcome& m = out.members[j];
    RandomStream rollout_rng = group_rng.fork("rollout", j);
    m.trajectory = sample_response(policy, inst.prompt, cfg.max_len,
                                   cfg.sample_temp, inst.format.end,
                                   rollout_rng);
    m.context = extract_context(m.trajectory.trace, cfg.context_pos);
    switch (source.kind) {
      case WeightSourceKind::ConductorSample: {
        RandomStream action_rng = group_rng.fork("action", j);
        m.action = sample_action(*conductor, m.context, action_rng);
        m.weights = emphasis_weights(m.action, cfg.emphasis,
                                     kNumRewardComponents);
        out.conductor_sampled = true;
        break;
      }
      case WeightSourceKind::Fixed:
        m.weights = source.fixed;
        break;
      case WeightSourceKind::RandomSimplex: {
        RandomStream weight_rng = group_rng.fork("weights", j);
        m.weights = SimplexVector::unchecked(
            weight_rng.next_dirichlet_uniform(kNumRewardComponents));
        break;
      }
    }
  }

  // Score the group.  Rank-based components need all members at once.
  std::vector<ResponseMeasurement> meas(g);
  for (int j = 0; j < g; ++j) {
    const Trajectory& traj = out.members[j].trajectory;
    const SegmentSplit split = split_segments(traj.response, inst.format);
    meas[j].format_valid = format_reward(traj.response, inst.format) == 1.0;
    meas[j].truncated = traj.truncated;
    meas[j].length = static_cast<int>(traj.response.size());
    TokenSeq think(split.think.begin(), split.think.end());
    meas[j].neg_nll = perplexity_raw(policy, inst.prompt, think, inst.reference);
    meas[j].raw_entropy = entropy_raw(traj);
    meas[j].raw_pref = scorer.score(traj.response, inst.format);
  }
  const std::vector<RewardVector> rewards = assemble_group_rewards(
      meas, inst.len_min, inst.len_max, cfg.flip_entropy);

  const double scalar_beta =
      cfg.fusion == KlFusion::RewardNode ? cfg.beta : 0.0;
  Eigen::VectorXd scalars(g);
  for (int j = 0; j < g; ++j) {
    MemberOutcome& m = out.members[j];
    m.rewards = rewards[j];
    m.kl = kl_penalty(policy, ref, m.trajectory);
    m.scalar_reward = scalarize(m.weights, m.rewards, scalar_beta, m.kl);
    m.oracle = oracle_utility(inst, m.trajectory.response);
    scalars[j] = m.scalar_reward;
  }

  const Eigen::VectorXd adv = group_advantages(scalars);
  for (int j = 0; j < g; ++j) out.members[j].advantage = adv[j];
  return out;
}

int supervised_warmup(PolicyParams& policy,
                      std::span<const PromptInstance> instances, int epochs,
                      double q, int batch_size, const AdamConfig& adam,
                      const RandomStream& rng) {
  if (epochs < 0) throw std::invalid_argument("warmup: negative epochs");
  if (epochs == 0) return 0;
  if (instances.empty()) throw std::invalid_argument("warmup: no instances");
  if (batch_size < 1) throw std::invalid_argument("warmup: batch_size < 1");

  AdamState opt;
  int steps = 0;
  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int e = 0; e < epochs; ++e) {
    RandomStream shuffle_rng = rng.fork("shuffle", e);
    shuffle_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += batch_size) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(batch_size));
      std::vector<Trajectory> targets;
      targets.reserve(end - at);
      for (std::size_t i = at; i < end; ++i) {
        const PromptInstance& inst = instances[order[i]];
        RandomStream sample_rng = rng.fork("target", e, order[i]);
        Trajectory t;
        t.prompt = inst.prompt;
        t.response = graded_response(inst, q, sample_rng);
        targets.push_back(std::move(t));
      }
      // Advantage +1 with beta 0 turns the surrogate into mean NLL, so the
      // policy-gradient machinery doubles as the cross-entropy gradient.
      std::vector<AdvantageSample> batch;
      batch.reserve(targets.size());
      for (const Trajectory& t : targets) batch.push_back({&t, 1.0});
      const PolicyGradient grad =
          policy_gradient(policy, batch, 0.0, policy, false);
      apply_update(policy, grad, opt, adam);
      ++steps;
      if (!policy.all_finite()) {
        throw std::runtime_error("warmup produced non-finite parameters");
      }
    }
  }
  return steps;
}

GrpoTrainer::GrpoTrainer(PolicyParams init, TrainerConfig cfg)
    : policy_(std::move(init)), ref_(policy_), cfg_(cfg) {
  if (cfg_.sync_interval < 1) throw std::invalid_argument("sync_interval < 1");
  if (!(cfg_.sync_alpha >= 0.0 && cfg_.sync_alpha <= 1.0)) {
    throw std::invalid_argument("sync_alpha outside [0, 1]");
  }
  if (!policy_.all_finite()) {
    throw std::invalid_argument("non-finite initial policy");
  }
}

void GrpoTrainer::set_step_count(int step) {
  if (step < 0) throw std::invalid_argument("negative step count");
  step_ = step;
}

StepOutcome GrpoTrainer::step(std::span<const PromptInstance* const> batch,
                              const ConductorParams* conductor,
                              const WeightSource& source,
                              const PrefScorer& scorer,
                              MetaBuffer* meta_buffer,
                              const RandomStream& step_rng) {
  if (batch.empty()) throw std::invalid_argument("empty batch");

  StepOutcome out;
  out.groups.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.groups.push_back(run_group(policy_, ref_, *batch[i], conductor,
                                   source, scorer, cfg_.group,
                                   step_rng.fork("group", i)));
  }

  // Policy update over every member, truncated rollouts masked out.
  std::vector<AdvantageSample> samples;
  std::vector<MetaTransition> transitions;
  for (const GroupResult& group : out.groups) {
    for (const MemberOutcome& m : group.members) {
      samples.push_back({&m.trajectory, m.advantage});
      if (group.conductor_sampled) {
        transitions.push_back({m.context, m.action, m.advantage});
      }
    }
  }
  const double loss_beta =
      cfg_.group.fusion == KlFusion::LossTerm ? cfg_.group.beta : 0.0;
  const PolicyGradient grad =
      policy_gradient(policy_, samples, loss_beta, ref_, true);
  apply_update(policy_, grad, opt_, cfg_.policy_adam);
  ++step_;
  if (!policy_.all_finite()) {
    throw std::runtime_error("policy parameters non-finite at step " +
                             std::to_string(step_));
  }
  if (step_ % cfg_.sync_interval == 0) {
    sync_reference(ref_, policy_, cfg_.sync_alpha);
  }
  if (meta_buffer != nullptr && !transitions.empty()) {
    meta_buffer->push(transitions);
  }

  // Aggregate diagnostics over all members.
  StepLog& log = out.log;
  log.step = step_;
  int members = 0;
  int conductor_members = 0;
  for (const GroupResult& group : out.groups) {
    for (const MemberOutcome& m : group.members) {
      if (group.conductor_sampled && conductor != nullptr) {
        const SimplexVector dist = action_distribution(*conductor, m.context);
        for (int k = 0; k < kNumRewardComponents; ++k) {
          log.conductor_probs[k] += dist[k];
        }
        ++conductor_members;
      }
      const auto r = m.rewards.as_array();
      for (int k = 0; k < kNumRewardComponents; ++k) {
        log.reward_means[k] += r[k];
        log.weight_means[k] += m.weights[k];
      }
      log.mean_abs_advantage += std::abs(m.advantage);
      log.kl_mean += m.kl;
      log.mean_response_length +=
          static_cast<double>(m.trajectory.response.size());
      log.truncated_frac += m.trajectory.truncated ? 1.0 : 0.0;
      log.mean_oracle += m.oracle;
      ++members;
    }
  }
  const double inv = 1.0 / static_cast<double>(members);
  for (int k = 0; k < kNumRewardComponents; ++k) {
    log.reward_means[k] *= inv;
    log.weight_means[k] *= inv;
  }
  log.mean_abs_advantage *= inv;
  log.kl_mean *= inv;
  log.mean_response_length *= inv;
  log.truncated_frac *= inv;
  log.mean_oracle *= inv;
  if (conductor_members > 0) {
    for (double& p : log.conductor_probs) {
      p /= static_cast<double>(conductor_members);
    }
  } else {
    log.conductor_probs = log.weight_means;
  }
  return out;
}

}  // namespace orchestra
