#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "orchestra/grpo.hpp"
#include "test_support.hpp"

using namespace orchestra;

namespace {

RewardVector rv(double fmt, double ppl, double ent, double len, double pref) {
  RewardVector r;
  r.fmt = fmt;
  r.ppl = ppl;
  r.ent = ent;
  r.len = len;
  r.pref = pref;
  return r;
}

PolicyParams small_policy(std::uint64_t seed) {
  RandomStream rng(seed);
  return PolicyParams::random_init(tok::kVocab, 16, 0.5, rng);
}

std::vector<const PromptInstance*> pointers(
    const std::vector<PromptInstance>& instances) {
  std::vector<const PromptInstance*> out;
  for (const PromptInstance& inst : instances) out.push_back(&inst);
  return out;
}

}  // namespace

TEST_CASE("scalarize is the weighted sum minus the KL toll") {
  const SimplexVector uniform = SimplexVector::uniform(5);
  const RewardVector r = rv(1, 0, 1, 0, 1);
  CHECK(std::abs(scalarize(uniform, r, 0.1, 0.5) - 0.55) < 1e-15);
  CHECK(std::abs(scalarize(uniform, r, 0.0, 7.0) - 0.6) < 1e-15);

  const SimplexVector pick = SimplexVector::one_hot(5, 1);
  CHECK(scalarize(pick, rv(0.3, 0.9, 0.1, 0.2, 0.4), 0.0, 0.0) == 0.9);

  const SimplexVector wrong = SimplexVector::uniform(3);
  CHECK_THROWS_AS(scalarize(wrong, r, 0.1, 0.0), std::invalid_argument);
}

TEST_CASE("group advantages reproduce the frozen example") {
  Eigen::VectorXd r(3);
  r << 0.2, 0.5, 0.8;
  const Eigen::VectorXd a = group_advantages(r);
  CHECK(std::abs(a(0) - (-1.2247398714120012)) < 1e-12);
  CHECK(std::abs(a(1)) < 1e-12);
  CHECK(std::abs(a(2) - 1.2247398714120015) < 1e-12);

  Eigen::VectorXd pair(2);
  pair << 0.0, 1.0;
  const Eigen::VectorXd ap = group_advantages(pair);
  CHECK(std::abs(ap(0) + 1.0) < 2e-6);
  CHECK(std::abs(ap(1) - 1.0) < 2e-6);
}

TEST_CASE("identical rewards give exact zero advantages") {
  Eigen::VectorXd r = Eigen::VectorXd::Constant(5, 0.37);
  const Eigen::VectorXd a = group_advantages(r);
  for (int j = 0; j < 5; ++j) CHECK(a(j) == 0.0);

  // Exactness must survive values whose mean subtraction would leave
  // rounding dust.
  Eigen::VectorXd odd = Eigen::VectorXd::Constant(3, 0.1 + 0.2);
  const Eigen::VectorXd ao = group_advantages(odd);
  for (int j = 0; j < 3; ++j) CHECK(ao(j) == 0.0);
}

TEST_CASE("advantage identities hold over random groups") {
  RandomStream rng(80);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = 2 + rng.next_int(7);
    Eigen::VectorXd r(g);
    for (int j = 0; j < g; ++j) r(j) = rng.next_gaussian();
    const Eigen::VectorXd a = group_advantages(r);
    CHECK(std::abs(a.sum()) < 1e-9);

    // Shift invariance.
    const Eigen::VectorXd shifted =
        group_advantages((r.array() + 17.25).matrix());
    CHECK((a - shifted).cwiseAbs().maxCoeff() < 1e-9);

    // Second moment reflects the std floor: mean(a^2) = (s / (s + 1e-6))^2.
    const double mean = r.mean();
    const double s = std::sqrt((r.array() - mean).square().mean());
    const double want = (s / (s + 1e-6)) * (s / (s + 1e-6));
    CHECK(std::abs(a.array().square().mean() - want) < 1e-9);
  }
}

TEST_CASE("advantage input validation") {
  CHECK_THROWS_AS(group_advantages(Eigen::VectorXd()), std::invalid_argument);
  CHECK_THROWS_AS(group_advantages(Eigen::VectorXd::Constant(1, 0.5)),
                  std::invalid_argument);
  Eigen::VectorXd bad(2);
  bad << 0.5, std::nan("");
  CHECK_THROWS_AS(group_advantages(bad), std::invalid_argument);
  bad << 0.5, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(group_advantages(bad), std::invalid_argument);
}

TEST_CASE("run_group is deterministic in the forked stream") {
  const PolicyParams policy = small_policy(81);
  const PolicyParams ref = small_policy(82);
  const PromptInstance inst = make_instance(Family::Reason, 7);
  const PrefScorer scorer = pref_scorer(11);
  GroupConfig cfg;

  const RandomStream g1 = RandomStream(83).fork("group", 0);
  const RandomStream g2 = RandomStream(83).fork("group", 0);
  const GroupResult a = run_group(policy, ref, inst, nullptr,
                                  WeightSource{}, scorer, cfg, g1);
  const GroupResult b = run_group(policy, ref, inst, nullptr,
                                  WeightSource{}, scorer, cfg, g2);
  REQUIRE(a.members.size() == 5);
  REQUIRE(b.members.size() == 5);
  for (int j = 0; j < 5; ++j) {
    CHECK(a.members[j].trajectory.response == b.members[j].trajectory.response);
    CHECK(a.members[j].context == b.members[j].context);
    CHECK(a.members[j].scalar_reward == b.members[j].scalar_reward);
    CHECK(a.members[j].advantage == b.members[j].advantage);
    CHECK(a.members[j].kl == b.members[j].kl);
  }
  CHECK_FALSE(a.conductor_sampled);

  double sum = 0.0;
  for (const MemberOutcome& m : a.members) sum += m.advantage;
  CHECK(std::abs(sum) < 1e-9);
}

TEST_CASE("fixed weights apply to every member unchanged") {
  const PolicyParams policy = small_policy(84);
  const PromptInstance inst = make_instance(Family::Create, 3);
  const PrefScorer scorer = pref_scorer(11);
  GroupConfig cfg;

  Eigen::VectorXd raw(5);
  raw << 0.4, 0.3, 0.1, 0.1, 0.1;
  const SimplexVector w = SimplexVector::checked(raw);
  const GroupResult res =
      run_group(policy, policy, inst, nullptr, WeightSource::fixed_weights(w),
                scorer, cfg, RandomStream(85));
  for (const MemberOutcome& m : res.members) {
    CHECK(m.weights.probs() == w.probs());
    CHECK(m.action == -1);
  }
}

TEST_CASE("random simplex weights vary across members") {
  const PolicyParams policy = small_policy(86);
  const PromptInstance inst = make_instance(Family::Format, 4);
  const GroupResult res = run_group(
      policy, policy, inst, nullptr, WeightSource::random_simplex(),
      pref_scorer(11), GroupConfig{}, RandomStream(87));
  bool any_differ = false;
  for (int j = 1; j < 5; ++j) {
    const SimplexVector& wj = res.members[static_cast<std::size_t>(j)].weights;
    if (wj.probs() != res.members[0].weights.probs()) any_differ = true;
    CHECK(std::abs(wj.probs().sum() - 1.0) < 1e-9);
  }
  CHECK(any_differ);
  CHECK(res.members[0].action == -1);
}

TEST_CASE("conductor sampling records per-member actions") {
  const PolicyParams policy = small_policy(88);
  const PromptInstance inst = make_instance(Family::Reason, 9);
  const ConductorParams conductor =
      ConductorParams::zeros(5, policy.width());
  const GroupResult res = run_group(
      policy, policy, inst, &conductor, WeightSource::conductor(),
      pref_scorer(11), GroupConfig{}, RandomStream(89));

  CHECK(res.conductor_sampled);
  std::set<int> actions;
  for (const MemberOutcome& m : res.members) {
    CHECK(m.action >= 0);
    CHECK(m.action < 5);
    actions.insert(m.action);
    // One-hot emphasis: the weight vector is the action indicator.
    for (int k = 0; k < 5; ++k) {
      CHECK(m.weights[k] == (k == m.action ? 1.0 : 0.0));
    }
  }
  // Uniform conductor, five draws: all-identical actions would be a 1/625
  // event per group; this seed produces at least two distinct ones.
  CHECK(actions.size() >= 2);

  CHECK_THROWS_AS(
      run_group(policy, policy, inst, nullptr, WeightSource::conductor(),
                pref_scorer(11), GroupConfig{}, RandomStream(90)),
      std::invalid_argument);
}

TEST_CASE("each member's context comes off its own trajectory") {
  const PolicyParams policy = small_policy(91);
  const PromptInstance inst = make_instance(Family::Reason, 2);
  GroupConfig cfg;
  cfg.context_pos = ContextPosition::First;
  const GroupResult first = run_group(policy, policy, inst, nullptr,
                                      WeightSource{}, pref_scorer(11), cfg,
                                      RandomStream(92));
  cfg.context_pos = ContextPosition::Last;
  const GroupResult last = run_group(policy, policy, inst, nullptr,
                                     WeightSource{}, pref_scorer(11), cfg,
                                     RandomStream(92));

  bool any_last_differs = false;
  for (std::size_t j = 0; j < first.members.size(); ++j) {
    // Same forked streams, so the rollouts coincide; only the tap moves.
    const Trajectory& traj = first.members[j].trajectory;
    REQUIRE(traj.response == last.members[j].trajectory.response);
    CHECK(first.members[j].context ==
          extract_context(traj.trace, ContextPosition::First));
    CHECK(last.members[j].context ==
          extract_context(traj.trace, ContextPosition::Last));
    if (j > 0 && last.members[j].context != last.members[0].context) {
      any_last_differs = true;
    }
  }
  // Distinct responses must yield distinct terminal states; a shared prompt
  // encoding would make these all equal.
  CHECK(any_last_differs);
}

TEST_CASE("trainer steps are one-based and deterministic") {
  const Dataset data = generate_dataset(94, 10, 4, SimplexVector::uniform(3));
  const std::vector<const PromptInstance*> batch = pointers(data.train);
  const PrefScorer scorer = pref_scorer(11);

  TrainerConfig cfg;
  GrpoTrainer t1(small_policy(95), cfg);
  GrpoTrainer t2(small_policy(95), cfg);
  const std::uint64_t init_hash = t1.policy().content_hash();

  const RandomStream root(96);
  const StepOutcome o1 = t1.step(batch, nullptr, WeightSource{}, scorer,
                                 nullptr, root.fork("step", 0));
  const StepOutcome o2 = t2.step(batch, nullptr, WeightSource{}, scorer,
                                 nullptr, root.fork("step", 0));

  CHECK(o1.log.step == 1);
  CHECK(t1.step_count() == 1);
  CHECK(t1.policy().content_hash() == t2.policy().content_hash());
  CHECK(t1.policy().content_hash() != init_hash);
  CHECK(o1.groups.size() == batch.size());
  CHECK(o1.log.mean_abs_advantage == o2.log.mean_abs_advantage);

  const StepOutcome o3 = t1.step(batch, nullptr, WeightSource{}, scorer,
                                 nullptr, root.fork("step", 1));
  CHECK(o3.log.step == 2);
  CHECK(t1.step_count() == 2);
}

TEST_CASE("conductor transitions land in the buffer at batch times group") {
  const Dataset data = generate_dataset(97, 15, 4, SimplexVector::uniform(3));
  const std::vector<const PromptInstance*> batch = pointers(data.train);
  const PrefScorer scorer = pref_scorer(11);
  const PolicyParams init = small_policy(98);
  const ConductorParams conductor =
      ConductorParams::zeros(5, init.width());

  GrpoTrainer trainer(init, TrainerConfig{});
  MetaBuffer buf;
  trainer.step(batch, &conductor, WeightSource::conductor(), scorer, &buf,
               RandomStream(99).fork("step", 0));
  CHECK(buf.size() == batch.size() * 5);

  const std::vector<MetaTransition> drained = buf.drain();
  double sum = 0.0;
  for (const MetaTransition& t : drained) {
    CHECK(t.action >= 0);
    CHECK(t.action < 5);
    sum += t.advantage;
  }
  CHECK(std::abs(sum) < 1e-6 * static_cast<double>(drained.size()));

  // Fixed-weight arms contribute nothing even with a buffer attached.
  GrpoTrainer fixed_trainer(init, TrainerConfig{});
  MetaBuffer empty_buf;
  fixed_trainer.step(batch, &conductor, WeightSource{}, scorer, &empty_buf,
                     RandomStream(99).fork("step", 0));
  CHECK(empty_buf.empty());
}

TEST_CASE("KL fusion modes coincide bitwise at beta zero") {
  const Dataset data = generate_dataset(100, 12, 4, SimplexVector::uniform(3));
  const std::vector<const PromptInstance*> batch = pointers(data.train);
  const PrefScorer scorer = pref_scorer(11);
  const PolicyParams init = small_policy(101);

  TrainerConfig reward_cfg;
  reward_cfg.group.beta = 0.0;
  reward_cfg.group.fusion = KlFusion::RewardNode;
  TrainerConfig loss_cfg = reward_cfg;
  loss_cfg.group.fusion = KlFusion::LossTerm;

  GrpoTrainer a(init, reward_cfg);
  GrpoTrainer b(init, loss_cfg);
  const RandomStream root(102);
  for (int s = 0; s < 3; ++s) {
    a.step(batch, nullptr, WeightSource{}, scorer, nullptr,
           root.fork("step", s));
    b.step(batch, nullptr, WeightSource{}, scorer, nullptr,
           root.fork("step", s));
    CHECK(a.policy().content_hash() == b.policy().content_hash());
  }

  // With beta > 0 the two anchors genuinely differ.
  TrainerConfig hot = reward_cfg;
  hot.group.beta = 0.2;
  TrainerConfig hot_loss = loss_cfg;
  hot_loss.group.beta = 0.2;
  GrpoTrainer c(init, hot);
  GrpoTrainer d(init, hot_loss);
  for (int s = 0; s < 3; ++s) {
    c.step(batch, nullptr, WeightSource{}, scorer, nullptr,
           root.fork("step", s));
    d.step(batch, nullptr, WeightSource{}, scorer, nullptr,
           root.fork("step", s));
  }
  CHECK(c.policy().content_hash() != d.policy().content_hash());
}

TEST_CASE("the reference refreshes only on sync boundaries") {
  const Dataset data = generate_dataset(103, 10, 4, SimplexVector::uniform(3));
  const std::vector<const PromptInstance*> batch = pointers(data.train);
  const PrefScorer scorer = pref_scorer(11);

  TrainerConfig cfg;
  cfg.sync_interval = 2;
  cfg.sync_alpha = 0.5;
  GrpoTrainer trainer(small_policy(104), cfg);
  const std::uint64_t ref0 = trainer.reference().content_hash();

  const RandomStream root(105);
  trainer.step(batch, nullptr, WeightSource{}, scorer, nullptr,
               root.fork("step", 0));
  CHECK(trainer.reference().content_hash() == ref0);  // step 1: no sync

  trainer.step(batch, nullptr, WeightSource{}, scorer, nullptr,
               root.fork("step", 1));
  const std::uint64_t ref2 = trainer.reference().content_hash();
  CHECK(ref2 != ref0);  // step 2: synced

  trainer.step(batch, nullptr, WeightSource{}, scorer, nullptr,
               root.fork("step", 2));
  CHECK(trainer.reference().content_hash() == ref2);  // step 3: no sync
}

TEST_CASE("step log aggregates stay in range") {
  const Dataset data = generate_dataset(106, 15, 4, SimplexVector::uniform(3));
  const std::vector<const PromptInstance*> batch = pointers(data.train);
  GrpoTrainer trainer(small_policy(107), TrainerConfig{});
  const StepOutcome out =
      trainer.step(batch, nullptr, WeightSource{}, pref_scorer(11), nullptr,
                   RandomStream(108).fork("step", 0));

  double weight_sum = 0.0;
  for (int k = 0; k < kNumRewardComponents; ++k) {
    CHECK(out.log.reward_means[static_cast<std::size_t>(k)] >= 0.0);
    CHECK(out.log.reward_means[static_cast<std::size_t>(k)] <= 1.0);
    weight_sum += out.log.weight_means[static_cast<std::size_t>(k)];
  }
  CHECK(std::abs(weight_sum - 1.0) < 1e-9);
  CHECK(out.log.mean_abs_advantage >= 0.0);
  CHECK(out.log.truncated_frac >= 0.0);
  CHECK(out.log.truncated_frac <= 1.0);
  CHECK(out.log.mean_response_length > 0.0);
  CHECK(out.log.mean_response_length <=
        static_cast<double>(trainer.config().group.max_len));
  CHECK(out.log.mean_oracle >= 0.0);
  CHECK(out.log.mean_oracle <= 1.0);

  CHECK_THROWS_AS(
      trainer.step(std::vector<const PromptInstance*>{}, nullptr,
                   WeightSource{}, pref_scorer(11), nullptr, RandomStream(1)),
      std::invalid_argument);
}
