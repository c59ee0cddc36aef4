// Microbenchmarks for the kernels the training loop spends its time in.
// The conductor's forward pass is benchmarked next to rollout sampling and
// the policy gradient so the overhead claim in the timing report can be
// sanity-checked at the kernel level.

#include <benchmark/benchmark.h>

#include <vector>

#include "orchestra/conductor.hpp"
#include "orchestra/envsuite.hpp"
#include "orchestra/grpo.hpp"
#include "orchestra/meta.hpp"
#include "orchestra/rewards.hpp"
#include "orchestra/toy_lm.hpp"

namespace {

using namespace orchestra;

constexpr int kVocab = tok::kVocab;
constexpr int kWidth = 32;
constexpr int kActions = kNumRewardComponents;

PolicyParams bench_policy() {
  return PolicyParams::random_init(kVocab, kWidth, 0.5,
                                   RandomStream(42).fork("policy-init"));
}

PromptInstance bench_instance() {
  return make_instance(Family::Reason, 7, 8, 24);
}

void bm_softmax(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  Eigen::VectorXd logits(n);
  RandomStream rng(1);
  for (int i = 0; i < n; ++i) logits(i) = rng.next_gaussian();
  for (auto _ : state) {
    benchmark::DoNotOptimize(stable_softmax(logits, 0.8));
  }
}
BENCHMARK(bm_softmax)->Arg(5)->Arg(kVocab);

void bm_rank_normalize(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  Eigen::VectorXd values(n);
  RandomStream rng(2);
  for (int i = 0; i < n; ++i) values(i) = rng.next_gaussian();
  for (auto _ : state) {
    benchmark::DoNotOptimize(rank_normalize(values));
  }
}
BENCHMARK(bm_rank_normalize)->Arg(5)->Arg(75);

void bm_conductor_forward(benchmark::State& state) {
  ConductorParams cond = ConductorParams::zeros(kActions, kWidth);
  RandomStream rng(3);
  for (int a = 0; a < kActions; ++a) {
    cond.bias(a) = 0.1 * rng.next_gaussian();
    for (int d = 0; d < kWidth; ++d) cond.weight(a, d) = 0.1 * rng.next_gaussian();
  }
  Eigen::VectorXd h(kWidth);
  for (int d = 0; d < kWidth; ++d) h(d) = rng.next_gaussian();
  for (auto _ : state) {
    benchmark::DoNotOptimize(action_distribution(cond, h));
  }
}
BENCHMARK(bm_conductor_forward);

void bm_sample_response(benchmark::State& state) {
  const PolicyParams policy = bench_policy();
  const PromptInstance inst = bench_instance();
  const RandomStream rng = RandomStream(4).fork("rollout");
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        sample_response(policy, inst.prompt, 24, 0.8, tok::kEnd, rng));
  }
}
BENCHMARK(bm_sample_response);

void bm_policy_gradient(benchmark::State& state) {
  const PolicyParams policy = bench_policy();
  const PromptInstance inst = bench_instance();
  std::vector<Trajectory> trajs;
  std::vector<AdvantageSample> samples;
  RandomStream rng(5);
  for (int j = 0; j < 5; ++j) {
    trajs.push_back(
        sample_response(policy, inst.prompt, 24, 0.8, tok::kEnd,
                        rng.fork("rollout", static_cast<std::uint64_t>(j))));
  }
  for (int j = 0; j < 5; ++j) {
    samples.push_back({&trajs[static_cast<std::size_t>(j)], 0.3 * (j - 2)});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy_gradient(policy, samples, 0.1, policy, true));
  }
}
BENCHMARK(bm_policy_gradient);

void bm_run_group(benchmark::State& state) {
  const PolicyParams policy = bench_policy();
  const PromptInstance inst = bench_instance();
  const PrefScorer scorer = pref_scorer(42);
  ConductorParams cond = ConductorParams::zeros(kActions, kWidth);
  const GroupConfig cfg;
  const WeightSource source = WeightSource::conductor();
  const RandomStream rng = RandomStream(6).fork("group");
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        run_group(policy, policy, inst, &cond, source, scorer, cfg, rng));
  }
}
BENCHMARK(bm_run_group);

void bm_meta_gradient(benchmark::State& state) {
  ConductorParams cond = ConductorParams::zeros(kActions, kWidth);
  RandomStream rng(7);
  std::vector<MetaTransition> batch;
  for (int i = 0; i < 75; ++i) {
    MetaTransition tr;
    tr.context = Eigen::VectorXd::NullaryExpr(
        kWidth, [&rng](Eigen::Index) { return rng.next_gaussian(); });
    tr.action = rng.next_int(kActions);
    tr.advantage = rng.next_gaussian();
    batch.push_back(std::move(tr));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(meta_gradient(cond, batch, 1e-3));
  }
}
BENCHMARK(bm_meta_gradient);

}  // namespace
