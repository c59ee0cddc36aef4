#pragma once

// Group-relative policy optimization.  Each prompt spawns a group of
// rollouts; a member's scalar reward is the emphasis-weighted sum of its
// reward components, and its advantage is the group-normalized residual.
// Advantages double as the credit signal for the conductor: every member
// carries its own context (a state read off its own trajectory) and its own
// sampled emphasis action, so members of one group can disagree, which is
// what gives the meta-gradient something to learn from.

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "orchestra/conductor.hpp"
#include "orchestra/envsuite.hpp"
#include "orchestra/meta.hpp"
#include "orchestra/optimizer.hpp"
#include "orchestra/rewards.hpp"
#include "orchestra/toy_lm.hpp"

namespace orchestra {

// w·r − beta·kl.  Weights must be a simplex over the reward components.
double scalarize(const SimplexVector& weights, const RewardVector& rewards,
                 double beta, double kl);

// (R_j − mean) / (population std + 1e-6).  Bitwise-identical rewards are a
// special case returning exact zeros, not merely small values.
Eigen::VectorXd group_advantages(const Eigen::VectorXd& rewards);

// Where the KL anchor enters: folded into the scalar reward before
// normalization, or kept out of the reward and added to the loss.  The two
// coincide bitwise when beta is zero.
enum class KlFusion { RewardNode, LossTerm };

enum class WeightSourceKind { ConductorSample, Fixed, RandomSimplex };

struct WeightSource {
  WeightSourceKind kind = WeightSourceKind::Fixed;
  SimplexVector fixed = SimplexVector::uniform(kNumRewardComponents);

  static WeightSource conductor();
  static WeightSource fixed_weights(SimplexVector w);
  static WeightSource random_simplex();
};

struct MemberOutcome {
  Trajectory trajectory;
  Eigen::VectorXd context;  // this trajectory's state, shown to the conductor
  RewardVector rewards;
  SimplexVector weights = SimplexVector::uniform(kNumRewardComponents);
  int action = -1;  // conductor action index, -1 unless conductor-sampled
  double kl = 0.0;
  double scalar_reward = 0.0;
  double advantage = 0.0;
  double oracle = 0.0;
};

struct GroupResult {
  const PromptInstance* instance = nullptr;
  bool conductor_sampled = false;
  std::vector<MemberOutcome> members;
};

struct GroupConfig {
  int group_size = 5;
  int max_len = 24;
  double sample_temp = 0.8;
  double beta = 0.1;
  KlFusion fusion = KlFusion::RewardNode;
  ContextPosition context_pos = ContextPosition::Last;
  EmphasisConfig emphasis;      // one-hot during training
  bool flip_entropy = false;    // rank the entropy reward on -H
};

// Samples a group for one prompt and scores it end to end.  `group_rng` is
// consumed by value; member streams are forked from it, so group results
// do not depend on batch order.
GroupResult run_group(const PolicyParams& policy, const PolicyParams& ref,
                      const PromptInstance& inst,
                      const ConductorParams* conductor,
                      const WeightSource& source, const PrefScorer& scorer,
                      const GroupConfig& cfg, const RandomStream& group_rng);

// Teacher-forced cross-entropy on graded responses, run before any reward
// is seen.  Stands in for starting RL from an instruction-tuned checkpoint:
// rollouts from a blank policy almost never parse, so the reward channel
// has nothing to grab.  One graded target per instance per epoch, quality
// `q`.  Returns the number of optimizer steps taken.
int supervised_warmup(PolicyParams& policy,
                      std::span<const PromptInstance> instances, int epochs,
                      double q, int batch_size, const AdamConfig& adam,
                      const RandomStream& rng);

struct StepLog {
  int step = 0;
  std::array<double, kNumRewardComponents> reward_means{};
  std::array<double, kNumRewardComponents> weight_means{};   // applied
  std::array<double, kNumRewardComponents> conductor_probs{};  // policy mean
  double mean_abs_advantage = 0.0;
  double kl_mean = 0.0;
  double mean_response_length = 0.0;
  double truncated_frac = 0.0;
  double mean_oracle = 0.0;
};

struct StepOutcome {
  StepLog log;
  std::vector<GroupResult> groups;
};

struct TrainerConfig {
  GroupConfig group;
  AdamConfig policy_adam{.lr = 0.03};
  int sync_interval = 6;     // reference refresh cadence, in steps
  double sync_alpha = 0.6;   // ref' = alpha·ref + (1-alpha)·policy
};

class GrpoTrainer {
 public:
  GrpoTrainer(PolicyParams init, TrainerConfig cfg);

  // One optimizer step over a batch of prompts.  Conductor transitions for
  // sampled groups are appended to `meta_buffer` when it is non-null; the
  // conductor itself is only read.  Throws if the update produces a
  // non-finite parameter.
  StepOutcome step(std::span<const PromptInstance* const> batch,
                   const ConductorParams* conductor,
                   const WeightSource& source, const PrefScorer& scorer,
                   MetaBuffer* meta_buffer, const RandomStream& step_rng);

  const PolicyParams& policy() const { return policy_; }
  const PolicyParams& reference() const { return ref_; }
  const TrainerConfig& config() const { return cfg_; }
  int step_count() const { return step_; }

  // Checkpoint restore hooks.
  PolicyParams& mutable_policy() { return policy_; }
  PolicyParams& mutable_reference() { return ref_; }
  AdamState& optimizer_state() { return opt_; }
  void set_step_count(int step);

 private:
  PolicyParams policy_;
  PolicyParams ref_;
  TrainerConfig cfg_;
  AdamState opt_;
  int step_ = 0;
};

}  // namespace orchestra
