#pragma once

// Experiment harness: run configuration, the training loop wiring the policy
// trainer to the conductor, oracle evaluation, arm comparison, weight-
// dynamics export, and timing.  Everything a run produces is derived from
// its config; the serialized report is byte-identical across repeats, which
// is why wall-clock numbers live in a separate timing file.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orchestra/checkpoint.hpp"
#include "orchestra/envsuite.hpp"
#include "orchestra/grpo.hpp"
#include "orchestra/meta.hpp"

namespace orchestra {

inline constexpr int kPolicyVocab = tok::kVocab;
inline constexpr int kPolicyWidth = 32;

// Method arms.  maestro is the full system; equal/random/ppl-only/
// neg-entropy replace the conductor with fixed or random weights;
// judge-free-joint updates the conductor every step; layer-first and
// layer-middle move the context tap; no-entropy-reg drops the entropy bonus
// from the meta-objective.
enum class Arm {
  Maestro,
  Equal,
  Random,
  PplOnly,
  NegEntropy,
  JudgeFreeJoint,
  LayerFirst,
  LayerMiddle,
  NoEntropyReg,
};

const char* arm_name(Arm arm);
Arm arm_from_name(const std::string& name);
bool arm_has_conductor(Arm arm);

// Weight draw for the conductor-free arms; `rng` only advances for the
// random arm.
SimplexVector baseline_weights(Arm arm, RandomStream& rng);

struct RunConfig {
  std::uint64_t seed = 1;
  Arm arm = Arm::Maestro;
  int n_train = 600;
  int n_test = 120;
  std::array<double, kNumFamilies> family_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};
  int epochs = 2;
  int batch_size = 15;
  int group_size = 5;
  int max_len = 24;
  double sample_temp = 0.8;
  double beta = 0.1;
  KlFusion kl_fusion = KlFusion::RewardNode;
  int len_min = 8;
  int len_max = 24;
  double policy_lr = 0.03;
  double init_scale = 0.5;
  int warmup_epochs = 3;        // supervised pass before RL; 0 disables
  double warmup_quality = 0.9;  // graded-response quality for warmup targets
  int sync_interval = 6;
  double sync_alpha = 0.6;
  double conductor_lr = 0.05;
  double entropy_coeff = 1e-3;
  int update_interval = 3;
  double eps_floor = 1e-4;
  ContextPosition context_pos = ContextPosition::Last;
  EmphasisMode emphasis = EmphasisMode::OneHot;
  double soften_delta = 1.0;
  int eval_rollouts = 4;
  std::string out_dir;
};

// Strict decode: unknown keys are errors, every present key must have the
// right type.  Missing keys take the defaults above.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Folds the arm into the base knobs (context tap, update cadence, entropy
// coefficient) so reports echo what actually ran.
RunConfig resolve_arm(RunConfig cfg);

std::uint64_t config_content_hash(const RunConfig& cfg);

struct EvalSummary {
  double overall = 0.0;
  std::array<double, kNumFamilies> per_family{};
  std::array<int, kNumFamilies> counts{};
};

// Mean oracle utility of sampled responses, `rollouts` per instance.
// Instances weigh equally regardless of rollout count.
EvalSummary evaluate_policy(const PolicyParams& policy,
                            std::span<const PromptInstance> instances,
                            int rollouts, double temp, int max_len,
                            const RandomStream& rng);

// Mean conductor inference weights per family.  The conductor reads
// trajectory states, so each instance is answered `rollouts` times and the
// weights are averaged over the sampled contexts.
std::array<std::array<double, kNumRewardComponents>, kNumFamilies>
conductor_family_weights(const PolicyParams& policy,
                         const ConductorParams& conductor,
                         std::span<const PromptInstance> instances,
                         ContextPosition pos, int rollouts, double temp,
                         int max_len, const RandomStream& rng);

struct WeightDynamicsRow {
  int step = 0;
  Family family = Family::Reason;
  std::array<double, kNumRewardComponents> weights{};
};

struct RunReport {
  RunConfig config;  // resolved
  std::uint64_t dataset_hash = 0;
  std::uint64_t init_policy_hash = 0;
  std::uint64_t final_policy_hash = 0;
  std::uint64_t final_conductor_hash = 0;
  bool has_conductor = false;
  std::vector<StepLog> steps;
  std::vector<MetaUpdateLog> meta_updates;
  // Per meta-update boundary and family: mean weights over that step's
  // batch contexts (inference weights for conductor arms, applied weights
  // otherwise).  Logged before the boundary's conductor update.
  std::vector<WeightDynamicsRow> dynamics;
  // Conductor arms: mean inference weights over test contexts per family.
  std::array<std::array<double, kNumRewardComponents>, kNumFamilies>
      test_family_weights{};
  EvalSummary eval;

  // Wall-clock measurements; kept out of the deterministic serialization.
  double total_wall_s = 0.0;
  double mean_step_s = 0.0;
  double conductor_wall_s = 0.0;
  double overhead_frac = 0.0;
  double mean_response_length = 0.0;
};

struct RunResult {
  RunReport report;
  TrainingCheckpoint checkpoint;
};

using StepCallback = std::function<void(const StepLog&)>;

RunResult run_experiment(const RunConfig& cfg,
                         const StepCallback& on_step = {});

// Deterministic report serialization; wall-clock fields are excluded and
// round trip as zeros.
nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
nlohmann::json timing_to_json(const RunReport& report);

// Writes report.json, timing.json, checkpoint.bin into out_dir.
void write_run_outputs(const RunResult& result,
                       const std::filesystem::path& out_dir);

// CSV with columns step,family,w_fmt,w_ppl,w_ent,w_len,w_pref at meta-update
// cadence.  Requires a conductor-bearing arm.
void export_weight_dynamics(const RunReport& report,
                            const std::filesystem::path& csv_path);

struct CompareRow {
  std::string arm;
  std::string family;  // family name or "overall"
  double mean_oracle = 0.0;
  double spread = 0.0;    // sample std across seeds
  double win_rate = 0.0;  // reference-arm win rate; NaN on family rows
};

// Runs every config and aggregates test oracle utility per arm.  Strict
// mode (the comparison table) demands >= 2 arms and >= 3 seeds shared by
// all arms; relaxed mode (ablations) takes what it gets.  Reports must
// agree on datasets and initial policies per seed, which is asserted.
std::vector<CompareRow> compare_arms(std::span<const RunConfig> configs,
                                     bool strict = true,
                                     const StepCallback& on_step = {});
std::vector<CompareRow> aggregate_reports(std::span<const RunReport> reports,
                                          bool strict);
void write_compare_csv(std::span<const CompareRow> rows,
                       const std::filesystem::path& path);

struct TimingRow {
  std::string arm;
  double total_s = 0.0;
  double mean_step_s = 0.0;
  double overhead_frac = 0.0;
  double mean_response_length = 0.0;
  double delta_vs_first = 0.0;
};

// Runs configs that are identical apart from the arm and tabulates
// wall-clock cost; the conductor overhead fraction comes from replaying the
// conductor's forward passes against recorded contexts plus the measured
// meta-update time.
std::vector<TimingRow> timing_report(std::span<const RunConfig> configs);
void write_timing_csv(std::span<const TimingRow> rows,
                      const std::filesystem::path& path);

// Runs every *.json config under config_dir (sorted by filename), writes
// each run's outputs, and returns relaxed-mode aggregate rows.
std::vector<CompareRow> run_ablation(const std::filesystem::path& config_dir,
                                     const std::filesystem::path& out_dir,
                                     const StepCallback& on_step = {});

}  // namespace orchestra
