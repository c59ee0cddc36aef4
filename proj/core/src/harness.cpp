#include "orchestra/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

namespace orchestra {

namespace {

using json = nlohmann::json;
using steady = std::chrono::steady_clock;

double seconds_between(steady::time_point a, steady::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex16(const std::string& s) {
  if (s.size() != 16) throw std::invalid_argument("bad hash string: " + s);
  return std::stoull(s, nullptr, 16);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct ArmEntry {
  Arm arm;
  const char* name;
};

constexpr ArmEntry kArms[] = {
    {Arm::Maestro, "maestro"},
    {Arm::Equal, "equal"},
    {Arm::Random, "random"},
    {Arm::PplOnly, "ppl-only"},
    {Arm::NegEntropy, "neg-entropy"},
    {Arm::JudgeFreeJoint, "judge-free-joint"},
    {Arm::LayerFirst, "layer-first"},
    {Arm::LayerMiddle, "layer-middle"},
    {Arm::NoEntropyReg, "no-entropy-reg"},
};

const char* fusion_name(KlFusion f) {
  return f == KlFusion::RewardNode ? "reward-node" : "loss-term";
}

KlFusion fusion_from_name(const std::string& s) {
  if (s == "reward-node") return KlFusion::RewardNode;
  if (s == "loss-term") return KlFusion::LossTerm;
  throw std::invalid_argument("unknown kl_fusion: " + s);
}

const char* context_name(ContextPosition p) {
  switch (p) {
    case ContextPosition::First: return "first";
    case ContextPosition::Middle: return "middle";
    case ContextPosition::Last: return "last";
  }
  throw std::invalid_argument("bad context position");
}

ContextPosition context_from_name(const std::string& s) {
  if (s == "first") return ContextPosition::First;
  if (s == "middle") return ContextPosition::Middle;
  if (s == "last") return ContextPosition::Last;
  throw std::invalid_argument("unknown context_pos: " + s);
}

const char* emphasis_name(EmphasisMode m) {
  return m == EmphasisMode::OneHot ? "one-hot" : "softened";
}

EmphasisMode emphasis_from_name(const std::string& s) {
  if (s == "one-hot") return EmphasisMode::OneHot;
  if (s == "softened") return EmphasisMode::Softened;
  throw std::invalid_argument("unknown emphasis: " + s);
}

void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("config: " + msg);
  };
  if (c.n_train < 1) fail("n_train must be >= 1");
  if (c.n_test < 1) fail("n_test must be >= 1");
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (c.group_size < 2) fail("group_size must be >= 2");
  if (c.max_len < 1) fail("max_len must be >= 1");
  if (!(c.sample_temp > 0.0) || !std::isfinite(c.sample_temp)) {
    fail("sample_temp must be positive");
  }
  if (c.beta < 0.0) fail("beta must be >= 0");
  if (c.len_min < 1 || c.len_min >= c.len_max) fail("need 1 <= len_min < len_max");
  if (!(c.policy_lr > 0.0)) fail("policy_lr must be positive");
  if (c.init_scale < 0.0) fail("init_scale must be >= 0");
  if (c.warmup_epochs < 0) fail("warmup_epochs must be >= 0");
  if (!(c.warmup_quality >= 0.0 && c.warmup_quality <= 1.0)) {
    fail("warmup_quality outside [0, 1]");
  }
  if (c.sync_interval < 1) fail("sync_interval must be >= 1");
  if (!(c.sync_alpha >= 0.0 && c.sync_alpha <= 1.0)) fail("sync_alpha outside [0, 1]");
  if (!(c.conductor_lr > 0.0)) fail("conductor_lr must be positive");
  if (c.entropy_coeff < 0.0) fail("entropy_coeff must be >= 0");
  if (c.update_interval < 1) fail("update_interval must be >= 1");
  if (!(c.eps_floor > 0.0 &&
        c.eps_floor < 1.0 / static_cast<double>(kNumRewardComponents))) {
    fail("eps_floor outside (0, 1/K)");
  }
  if (!(c.soften_delta >= 0.0 && c.soften_delta <= 1.0)) {
    fail("soften_delta outside [0, 1]");
  }
  if (c.eval_rollouts < 1) fail("eval_rollouts must be >= 1");
  double mix_sum = 0.0;
  for (double m : c.family_mix) {
    if (m < 0.0) fail("family_mix components must be >= 0");
    mix_sum += m;
  }
  if (std::abs(mix_sum - 1.0) > 1e-9) fail("family_mix must sum to 1");
}

SimplexVector family_mix_vector(const RunConfig& c) {
  Eigen::VectorXd v(kNumFamilies);
  for (int i = 0; i < kNumFamilies; ++i) v[i] = c.family_mix[i];
  return SimplexVector::unchecked(v / v.sum());
}

template <std::size_t N>
json to_json_array(const std::array<double, N>& a) {
  json out = json::array();
  for (double v : a) out.push_back(v);
  return out;
}

template <std::size_t N>
std::array<double, N> from_json_array(const json& j) {
  if (!j.is_array() || j.size() != N) {
    throw std::invalid_argument("expected array of size " + std::to_string(N));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = j.at(i).get<double>();
  return out;
}

}  // namespace

const char* arm_name(Arm arm) {
  for (const ArmEntry& e : kArms) {
    if (e.arm == arm) return e.name;
  }
  throw std::invalid_argument("bad arm value");
}

Arm arm_from_name(const std::string& name) {
  for (const ArmEntry& e : kArms) {
    if (name == e.name) return e.arm;
  }
  throw std::invalid_argument("unknown arm: " + name);
}

bool arm_has_conductor(Arm arm) {
  switch (arm) {
    case Arm::Maestro:
    case Arm::JudgeFreeJoint:
    case Arm::LayerFirst:
    case Arm::LayerMiddle:
    case Arm::NoEntropyReg:
      return true;
    case Arm::Equal:
    case Arm::Random:
    case Arm::PplOnly:
    case Arm::NegEntropy:
      return false;
  }
  throw std::invalid_argument("bad arm value");
}

SimplexVector baseline_weights(Arm arm, RandomStream& rng) {
  switch (arm) {
    case Arm::Equal:
      return SimplexVector::uniform(kNumRewardComponents);
    case Arm::Random:
      return SimplexVector::unchecked(
          rng.next_dirichlet_uniform(kNumRewardComponents));
    case Arm::PplOnly:
      return SimplexVector::one_hot(kNumRewardComponents, kRewardPpl);
    case Arm::NegEntropy:
      return SimplexVector::one_hot(kNumRewardComponents, kRewardEnt);
    default:
      throw std::invalid_argument(
          "baseline_weights: arm has no fixed weighting");
  }
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known = {
      "seed", "arm", "n_train", "n_test", "family_mix", "epochs",
      "batch_size", "group_size", "max_len", "sample_temp", "beta",
      "kl_fusion", "len_min", "len_max", "policy_lr", "init_scale",
      "warmup_epochs", "warmup_quality",
      "sync_interval", "sync_alpha", "conductor_lr", "entropy_coeff",
      "update_interval", "eps_floor", "context_pos", "emphasis",
      "soften_delta", "eval_rollouts", "out_dir"};
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      throw std::invalid_argument("unknown config key '" + item.key() + "'");
    }
  }
  RunConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("seed", c.seed);
  if (j.contains("arm")) c.arm = arm_from_name(j.at("arm").get<std::string>());
  get("n_train", c.n_train);
  get("n_test", c.n_test);
  if (j.contains("family_mix")) {
    c.family_mix = from_json_array<kNumFamilies>(j.at("family_mix"));
  }
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("group_size", c.group_size);
  get("max_len", c.max_len);
  get("sample_temp", c.sample_temp);
  get("beta", c.beta);
  if (j.contains("kl_fusion")) {
    c.kl_fusion = fusion_from_name(j.at("kl_fusion").get<std::string>());
  }
  get("len_min", c.len_min);
  get("len_max", c.len_max);
  get("policy_lr", c.policy_lr);
  get("init_scale", c.init_scale);
  get("warmup_epochs", c.warmup_epochs);
  get("warmup_quality", c.warmup_quality);
  get("sync_interval", c.sync_interval);
  get("sync_alpha", c.sync_alpha);
  get("conductor_lr", c.conductor_lr);
  get("entropy_coeff", c.entropy_coeff);
  get("update_interval", c.update_interval);
  get("eps_floor", c.eps_floor);
  if (j.contains("context_pos")) {
    c.context_pos = context_from_name(j.at("context_pos").get<std::string>());
  }
  if (j.contains("emphasis")) {
    c.emphasis = emphasis_from_name(j.at("emphasis").get<std::string>());
  }
  get("soften_delta", c.soften_delta);
  get("eval_rollouts", c.eval_rollouts);
  get("out_dir", c.out_dir);
  validate_config(c);
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["arm"] = arm_name(c.arm);
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["family_mix"] = to_json_array(c.family_mix);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["group_size"] = c.group_size;
  j["max_len"] = c.max_len;
  j["sample_temp"] = c.sample_temp;
  j["beta"] = c.beta;
  j["kl_fusion"] = fusion_name(c.kl_fusion);
  j["len_min"] = c.len_min;
  j["len_max"] = c.len_max;
  j["policy_lr"] = c.policy_lr;
  j["init_scale"] = c.init_scale;
  j["warmup_epochs"] = c.warmup_epochs;
  j["warmup_quality"] = c.warmup_quality;
  j["sync_interval"] = c.sync_interval;
  j["sync_alpha"] = c.sync_alpha;
  j["conductor_lr"] = c.conductor_lr;
  j["entropy_coeff"] = c.entropy_coeff;
  j["update_interval"] = c.update_interval;
  j["eps_floor"] = c.eps_floor;
  j["context_pos"] = context_name(c.context_pos);
  j["emphasis"] = emphasis_name(c.emphasis);
  j["soften_delta"] = c.soften_delta;
  j["eval_rollouts"] = c.eval_rollouts;
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

RunConfig resolve_arm(RunConfig c) {
  switch (c.arm) {
    case Arm::LayerFirst:
      c.context_pos = ContextPosition::First;
      break;
    case Arm::LayerMiddle:
      c.context_pos = ContextPosition::Middle;
      break;
    case Arm::JudgeFreeJoint:
      c.update_interval = 1;
      break;
    case Arm::NoEntropyReg:
      c.entropy_coeff = 0.0;
      break;
    default:
      break;
  }
  validate_config(c);
  return c;
}

std::uint64_t config_content_hash(const RunConfig& c) {
  const std::string dump = run_config_to_json(c).dump();
  return fnv1a_bytes(dump.data(), dump.size());
}

EvalSummary evaluate_policy(const PolicyParams& policy,
                            std::span<const PromptInstance> instances,
                            int rollouts, double temp, int max_len,
                            const RandomStream& rng) {
  if (instances.empty()) throw std::invalid_argument("evaluate_policy: no instances");
  if (rollouts < 1) throw std::invalid_argument("evaluate_policy: rollouts < 1");
  EvalSummary s;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const PromptInstance& inst = instances[i];
    double util = 0.0;
    for (int r = 0; r < rollouts; ++r) {
      RandomStream item_rng = rng.fork("item", i, r);
      const Trajectory traj =
          sample_response(policy, inst.prompt, max_len, temp,
                          inst.format.end, item_rng);
      util += oracle_utility(inst, traj.response);
    }
    util /= static_cast<double>(rollouts);
    const int f = static_cast<int>(inst.family);
    s.per_family[f] += util;
    s.counts[f] += 1;
    s.overall += util;
  }
  s.overall /= static_cast<double>(instances.size());
  for (int f = 0; f < kNumFamilies; ++f) {
    if (s.counts[f] > 0) s.per_family[f] /= static_cast<double>(s.counts[f]);
  }
  return s;
}

namespace {

WeightSource weight_source_for(Arm arm) {
  if (arm_has_conductor(arm)) return WeightSource::conductor();
  if (arm == Arm::Random) return WeightSource::random_simplex();
  RandomStream unused(0);
  return WeightSource::fixed_weights(baseline_weights(arm, unused));
}

// Mean weights per family over one step's rollouts: the conductor's
// inference weights on the member contexts, or the applied weights for
// fixed arms.
void append_dynamics_rows(std::vector<WeightDynamicsRow>& rows, int step,
                          const std::vector<GroupResult>& groups,
                          const ConductorParams* conductor) {
  for (int f = 0; f < kNumFamilies; ++f) {
    std::array<double, kNumRewardComponents> acc{};
    int n = 0;
    for (const GroupResult& g : groups) {
      if (static_cast<int>(g.instance->family) != f) continue;
      for (const MemberOutcome& m : g.members) {
        const SimplexVector w = conductor != nullptr
                                    ? inference_weights(*conductor, m.context)
                                    : m.weights;
        for (int k = 0; k < kNumRewardComponents; ++k) acc[k] += w[k];
        ++n;
      }
    }
    if (n == 0) continue;  // family absent from this batch
    for (double& v : acc) v /= static_cast<double>(n);
    rows.push_back({step, static_cast<Family>(f), acc});
  }
}

// Re-runs the conductor forwards a step performed, for timing only: one
// action sample plus one logging distribution per member.
double replay_conductor_cost(const ConductorParams& conductor,
                             const std::vector<GroupResult>& groups) {
  const auto t0 = steady::now();
  volatile int sink = 0;
  RandomStream scratch(0x7431u);
  for (const GroupResult& g : groups) {
    for (const MemberOutcome& m : g.members) {
      sink = sink + sample_action(conductor, m.context, scratch);
      sink = sink + static_cast<int>(
          action_distribution(conductor, m.context).size());
    }
  }
  return seconds_between(t0, steady::now());
}

}  // namespace

std::array<std::array<double, kNumRewardComponents>, kNumFamilies>
conductor_family_weights(const PolicyParams& policy,
                         const ConductorParams& conductor,
                         std::span<const PromptInstance> instances,
                         ContextPosition pos, int rollouts, double temp,
                         int max_len, const RandomStream& rng) {
  if (instances.empty()) {
    throw std::invalid_argument("conductor_family_weights: no instances");
  }
  if (rollouts < 1) {
    throw std::invalid_argument("conductor_family_weights: rollouts < 1");
  }
  std::array<std::array<double, kNumRewardComponents>, kNumFamilies> out{};
  std::array<int, kNumFamilies> counts{};
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const PromptInstance& inst = instances[i];
    const int f = static_cast<int>(inst.family);
    for (int r = 0; r < rollouts; ++r) {
      RandomStream item_rng = rng.fork("item", i, r);
      const Trajectory traj = sample_response(policy, inst.prompt, max_len,
                                              temp, inst.format.end, item_rng);
      const SimplexVector w =
          inference_weights(conductor, extract_context(traj.trace, pos));
      for (int k = 0; k < kNumRewardComponents; ++k) out[f][k] += w[k];
      counts[f] += 1;
    }
  }
  for (int f = 0; f < kNumFamilies; ++f) {
    if (counts[f] > 0) {
      for (double& v : out[f]) v /= static_cast<double>(counts[f]);
    }
  }
  return out;
}

RunResult run_experiment(const RunConfig& raw, const StepCallback& on_step) {
  const RunConfig cfg = resolve_arm(raw);
  const RandomStream root(cfg.seed);

  Dataset dataset = generate_dataset(cfg.seed, cfg.n_train, cfg.n_test,
                                     family_mix_vector(cfg), cfg.len_min,
                                     cfg.len_max);
  const PrefScorer scorer = pref_scorer(cfg.seed);
  PolicyParams init = PolicyParams::random_init(
      kPolicyVocab, kPolicyWidth, cfg.init_scale, root.fork("policy-init"));
  if (cfg.warmup_epochs > 0) {
    // RL starts from a policy that already speaks the output scaffold, the
    // way full-scale runs start from an instruction-tuned checkpoint.  The
    // reference below then anchors KL to this warmed-up point.
    supervised_warmup(init, dataset.train, cfg.warmup_epochs,
                      cfg.warmup_quality, cfg.batch_size,
                      AdamConfig{.lr = cfg.policy_lr}, root.fork("warmup"));
  }

  TrainerConfig tcfg;
  tcfg.group.group_size = cfg.group_size;
  tcfg.group.max_len = cfg.max_len;
  tcfg.group.sample_temp = cfg.sample_temp;
  tcfg.group.beta = cfg.beta;
  tcfg.group.fusion = cfg.kl_fusion;
  tcfg.group.context_pos = cfg.context_pos;
  tcfg.group.emphasis = {cfg.emphasis, cfg.soften_delta};
  tcfg.group.flip_entropy = (cfg.arm == Arm::NegEntropy);
  tcfg.policy_adam.lr = cfg.policy_lr;
  tcfg.sync_interval = cfg.sync_interval;
  tcfg.sync_alpha = cfg.sync_alpha;
  GrpoTrainer trainer(init, tcfg);

  const bool with_conductor = arm_has_conductor(cfg.arm);
  ConductorParams conductor;
  if (with_conductor) {
    conductor = ConductorParams::zeros(kNumRewardComponents, kPolicyWidth,
                                       cfg.eps_floor, 1.0);
  }
  MetaConfig mcfg;
  mcfg.update_interval = cfg.update_interval;
  mcfg.joint = (cfg.arm == Arm::JudgeFreeJoint);
  mcfg.entropy_coeff = cfg.entropy_coeff;
  mcfg.adam.lr = cfg.conductor_lr;
  AdamState meta_opt;
  MetaBuffer buffer;
  const WeightSource source = weight_source_for(cfg.arm);

  RunReport report;
  report.config = cfg;
  report.dataset_hash = dataset.content_hash();
  report.init_policy_hash = init.content_hash();
  report.has_conductor = with_conductor;

  std::vector<int> order(static_cast<std::size_t>(cfg.n_train));
  std::iota(order.begin(), order.end(), 0);

  int global_step = 0;
  int meta_count = 0;
  double train_wall = 0.0;
  double conductor_wall = 0.0;
  double resp_len_sum = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RandomStream shuffle_rng = root.fork("shuffle", epoch);
    shuffle_rng.shuffle(order);
    for (int start = 0; start < cfg.n_train; start += cfg.batch_size) {
      const int stop = std::min(cfg.n_train, start + cfg.batch_size);
      std::vector<const PromptInstance*> batch;
      batch.reserve(static_cast<std::size_t>(stop - start));
      for (int i = start; i < stop; ++i) {
        batch.push_back(&dataset.train[static_cast<std::size_t>(order[i])]);
      }

      const auto t0 = steady::now();
      StepOutcome outcome = trainer.step(
          batch, with_conductor ? &conductor : nullptr, source, scorer,
          with_conductor ? &buffer : nullptr, root.fork("step", global_step));
      train_wall += seconds_between(t0, steady::now());

      if ((global_step + 1) % mcfg.update_interval == 0) {
        // Dynamics snapshot precedes the update, so the first logged rows
        // show the untrained conductor.
        append_dynamics_rows(report.dynamics, outcome.log.step,
                             outcome.groups,
                             with_conductor ? &conductor : nullptr);
        if (with_conductor) {
          const auto m0 = steady::now();
          const MetaUpdateLog mlog =
              meta_update(conductor, buffer, mcfg, meta_opt, meta_count);
          const double meta_s = seconds_between(m0, steady::now());
          train_wall += meta_s;
          conductor_wall += meta_s;
          ++meta_count;
          report.meta_updates.push_back(mlog);
        }
      }
      if (with_conductor) {
        conductor_wall += replay_conductor_cost(conductor, outcome.groups);
      }
      resp_len_sum += outcome.log.mean_response_length;
      report.steps.push_back(outcome.log);
      if (on_step) on_step(outcome.log);
      ++global_step;
    }
  }

  report.final_policy_hash = trainer.policy().content_hash();
  report.final_conductor_hash = with_conductor ? conductor.content_hash() : 0;
  report.eval = evaluate_policy(trainer.policy(), dataset.test,
                                cfg.eval_rollouts, cfg.sample_temp,
                                cfg.max_len, root.fork("eval"));
  if (with_conductor) {
    report.test_family_weights = conductor_family_weights(
        trainer.policy(), conductor, dataset.test, cfg.context_pos,
        cfg.eval_rollouts, cfg.sample_temp, cfg.max_len,
        root.fork("eval-weights"));
  }

  const double steps = static_cast<double>(global_step);
  report.total_wall_s = train_wall;
  report.mean_step_s = train_wall / steps;
  report.conductor_wall_s = conductor_wall;
  report.overhead_frac = train_wall > 0.0 ? conductor_wall / train_wall : 0.0;
  report.mean_response_length = resp_len_sum / steps;

  RunResult result;
  result.report = std::move(report);
  TrainingCheckpoint& ckpt = result.checkpoint;
  ckpt.policy = trainer.policy();
  ckpt.reference = trainer.reference();
  ckpt.policy_opt = OptimizerSnapshot::capture(trainer.optimizer_state());
  ckpt.has_conductor = with_conductor;
  if (with_conductor) {
    ckpt.conductor = conductor;
    ckpt.conductor_opt = OptimizerSnapshot::capture(meta_opt);
  }
  ckpt.step = trainer.step_count();
  ckpt.meta_updates = meta_count;
  ckpt.config_hash = config_content_hash(cfg);
  return result;
}

json report_to_json(const RunReport& r) {
  json j;
  j["config"] = run_config_to_json(r.config);
  j["dataset_hash"] = hex16(r.dataset_hash);
  j["init_policy_hash"] = hex16(r.init_policy_hash);
  j["final_policy_hash"] = hex16(r.final_policy_hash);
  j["final_conductor_hash"] = hex16(r.final_conductor_hash);
  j["has_conductor"] = r.has_conductor;

  json steps = json::array();
  for (const StepLog& s : r.steps) {
    json o;
    o["step"] = s.step;
    o["reward_means"] = to_json_array(s.reward_means);
    o["weight_means"] = to_json_array(s.weight_means);
    o["conductor_probs"] = to_json_array(s.conductor_probs);
    o["mean_abs_advantage"] = s.mean_abs_advantage;
    o["kl_mean"] = s.kl_mean;
    o["mean_response_length"] = s.mean_response_length;
    o["truncated_frac"] = s.truncated_frac;
    o["mean_oracle"] = s.mean_oracle;
    steps.push_back(std::move(o));
  }
  j["steps"] = std::move(steps);

  json metas = json::array();
  for (const MetaUpdateLog& m : r.meta_updates) {
    json o;
    o["update_index"] = m.update_index;
    o["batch_size"] = m.batch_size;
    o["grad_norm"] = m.grad_norm;
    o["mean_entropy"] = m.mean_entropy;
    o["action_freq"] = to_json_array(m.action_freq);
    metas.push_back(std::move(o));
  }
  j["meta_updates"] = std::move(metas);

  json dyn = json::array();
  for (const WeightDynamicsRow& row : r.dynamics) {
    json o;
    o["step"] = row.step;
    o["family"] = family_name(row.family);
    o["weights"] = to_json_array(row.weights);
    dyn.push_back(std::move(o));
  }
  j["dynamics"] = std::move(dyn);

  json tfw;
  for (int f = 0; f < kNumFamilies; ++f) {
    tfw[family_name(static_cast<Family>(f))] =
        to_json_array(r.test_family_weights[static_cast<std::size_t>(f)]);
  }
  j["test_family_weights"] = std::move(tfw);

  json eval;
  eval["overall"] = r.eval.overall;
  json pf, counts;
  for (int f = 0; f < kNumFamilies; ++f) {
    pf[family_name(static_cast<Family>(f))] =
        r.eval.per_family[static_cast<std::size_t>(f)];
    counts[family_name(static_cast<Family>(f))] =
        r.eval.counts[static_cast<std::size_t>(f)];
  }
  eval["per_family"] = std::move(pf);
  eval["counts"] = std::move(counts);
  j["eval"] = std::move(eval);
  return j;
}

RunReport report_from_json(const json& j) {
  RunReport r;
  r.config = run_config_from_json(j.at("config"));
  r.dataset_hash = parse_hex16(j.at("dataset_hash").get<std::string>());
  r.init_policy_hash = parse_hex16(j.at("init_policy_hash").get<std::string>());
  r.final_policy_hash =
      parse_hex16(j.at("final_policy_hash").get<std::string>());
  r.final_conductor_hash =
      parse_hex16(j.at("final_conductor_hash").get<std::string>());
  r.has_conductor = j.at("has_conductor").get<bool>();

  for (const json& o : j.at("steps")) {
    StepLog s;
    s.step = o.at("step").get<int>();
    s.reward_means = from_json_array<kNumRewardComponents>(o.at("reward_means"));
    s.weight_means = from_json_array<kNumRewardComponents>(o.at("weight_means"));
    s.conductor_probs =
        from_json_array<kNumRewardComponents>(o.at("conductor_probs"));
    s.mean_abs_advantage = o.at("mean_abs_advantage").get<double>();
    s.kl_mean = o.at("kl_mean").get<double>();
    s.mean_response_length = o.at("mean_response_length").get<double>();
    s.truncated_frac = o.at("truncated_frac").get<double>();
    s.mean_oracle = o.at("mean_oracle").get<double>();
    r.steps.push_back(s);
  }
  for (const json& o : j.at("meta_updates")) {
    MetaUpdateLog m;
    m.update_index = o.at("update_index").get<int>();
    m.batch_size = o.at("batch_size").get<int>();
    m.grad_norm = o.at("grad_norm").get<double>();
    m.mean_entropy = o.at("mean_entropy").get<double>();
    m.action_freq = from_json_array<kNumRewardComponents>(o.at("action_freq"));
    r.meta_updates.push_back(m);
  }
  for (const json& o : j.at("dynamics")) {
    WeightDynamicsRow row;
    row.step = o.at("step").get<int>();
    row.family = family_from_name(o.at("family").get<std::string>());
    row.weights = from_json_array<kNumRewardComponents>(o.at("weights"));
    r.dynamics.push_back(row);
  }
  const json& tfw = j.at("test_family_weights");
  for (int f = 0; f < kNumFamilies; ++f) {
    r.test_family_weights[static_cast<std::size_t>(f)] =
        from_json_array<kNumRewardComponents>(
            tfw.at(family_name(static_cast<Family>(f))));
  }
  const json& eval = j.at("eval");
  r.eval.overall = eval.at("overall").get<double>();
  for (int f = 0; f < kNumFamilies; ++f) {
    const char* name = family_name(static_cast<Family>(f));
    r.eval.per_family[static_cast<std::size_t>(f)] =
        eval.at("per_family").at(name).get<double>();
    r.eval.counts[static_cast<std::size_t>(f)] =
        eval.at("counts").at(name).get<int>();
  }
  return r;
}

json timing_to_json(const RunReport& r) {
  json j;
  j["total_s"] = r.total_wall_s;
  j["mean_step_s"] = r.mean_step_s;
  j["conductor_s"] = r.conductor_wall_s;
  j["overhead_frac"] = r.overhead_frac;
  j["mean_response_length"] = r.mean_response_length;
  return j;
}

void write_run_outputs(const RunResult& result,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto write_text = [&out_dir](const char* name, const std::string& body) {
    const std::filesystem::path p = out_dir / name;
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot open " + p.string());
    out << body << '\n';
    if (!out) throw std::runtime_error("short write to " + p.string());
  };
  write_text("report.json", report_to_json(result.report).dump(2));
  write_text("timing.json", timing_to_json(result.report).dump(2));
  save_checkpoint(out_dir / "checkpoint.bin", result.checkpoint);
}

void export_weight_dynamics(const RunReport& report,
                            const std::filesystem::path& csv_path) {
  if (!arm_has_conductor(report.config.arm)) {
    throw std::invalid_argument(
        std::string("weight dynamics export requires a conductor arm, got '") +
        arm_name(report.config.arm) + "'");
  }
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot open " + csv_path.string());
  out << "step,family,w_fmt,w_ppl,w_ent,w_len,w_pref\n";
  for (const WeightDynamicsRow& row : report.dynamics) {
    out << row.step << ',' << family_name(row.family);
    for (double w : row.weights) out << ',' << fmt_g(w);
    out << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + csv_path.string());
}

namespace {

double sample_std(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) /
                      static_cast<double>(n);
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(n - 1));
}

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) /
         static_cast<double>(xs.size());
}

}  // namespace

std::vector<CompareRow> aggregate_reports(std::span<const RunReport> reports,
                                          bool strict) {
  if (reports.empty()) throw std::invalid_argument("no reports to aggregate");

  // Per-seed dataset and initial-policy hashes must agree across arms;
  // anything else means the arms did not see the same problem.
  std::map<std::uint64_t, std::pair<std::uint64_t, std::uint64_t>> seen;
  for (const RunReport& r : reports) {
    const auto key = r.config.seed;
    const auto val = std::make_pair(r.dataset_hash, r.init_policy_hash);
    auto [it, inserted] = seen.emplace(key, val);
    if (!inserted && it->second != val) {
      throw std::logic_error("arm isolation violated for seed " +
                             std::to_string(key));
    }
  }

  struct ArmAgg {
    std::string name;
    std::map<std::uint64_t, const RunReport*> by_seed;
  };
  std::vector<ArmAgg> arms;
  for (const RunReport& r : reports) {
    const std::string name = arm_name(r.config.arm);
    auto it = std::find_if(arms.begin(), arms.end(),
                           [&name](const ArmAgg& a) { return a.name == name; });
    if (it == arms.end()) {
      arms.push_back({name, {}});
      it = std::prev(arms.end());
    }
    if (!it->by_seed.emplace(r.config.seed, &r).second) {
      throw std::invalid_argument("duplicate run for arm " + name + ", seed " +
                                  std::to_string(r.config.seed));
    }
  }

  if (strict) {
    if (arms.size() < 2) {
      throw std::invalid_argument("comparison needs at least 2 arms");
    }
    std::vector<std::uint64_t> base_seeds;
    for (const auto& [seed, _] : arms.front().by_seed) base_seeds.push_back(seed);
    if (base_seeds.size() < 3) {
      throw std::invalid_argument("comparison needs at least 3 seeds per arm");
    }
    for (const ArmAgg& a : arms) {
      std::vector<std::uint64_t> seeds;
      for (const auto& [seed, _] : a.by_seed) seeds.push_back(seed);
      if (seeds != base_seeds) {
        throw std::invalid_argument("arms do not share one seed set");
      }
    }
  }

  const auto ref_it = std::find_if(arms.begin(), arms.end(), [](const ArmAgg& a) {
    return a.name == arm_name(Arm::Maestro);
  });
  const ArmAgg* ref = ref_it != arms.end() ? &*ref_it : &arms.front();

  std::vector<CompareRow> rows;
  for (const ArmAgg& a : arms) {
    for (int f = 0; f < kNumFamilies; ++f) {
      std::vector<double> vals;
      for (const auto& [seed, rep] : a.by_seed) {
        vals.push_back(rep->eval.per_family[static_cast<std::size_t>(f)]);
      }
      rows.push_back({a.name, family_name(static_cast<Family>(f)),
                      mean_of(vals), sample_std(vals),
                      std::numeric_limits<double>::quiet_NaN()});
    }
    std::vector<double> overall;
    for (const auto& [seed, rep] : a.by_seed) {
      overall.push_back(rep->eval.overall);
    }
    // Reference-arm win rate over shared seeds; ties count one half.
    double wins = 0.0;
    int paired = 0;
    for (const auto& [seed, rep] : a.by_seed) {
      const auto it = ref->by_seed.find(seed);
      if (it == ref->by_seed.end()) continue;
      const double mine = rep->eval.overall;
      const double theirs = it->second->eval.overall;
      wins += theirs > mine ? 1.0 : (theirs == mine ? 0.5 : 0.0);
      ++paired;
    }
    const double win_rate =
        paired > 0 ? wins / static_cast<double>(paired)
                   : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(
        {a.name, "overall", mean_of(overall), sample_std(overall), win_rate});
  }
  return rows;
}

std::vector<CompareRow> compare_arms(std::span<const RunConfig> configs,
                                     bool strict, const StepCallback& on_step) {
  std::vector<RunReport> reports;
  reports.reserve(configs.size());
  for (const RunConfig& c : configs) {
    reports.push_back(run_experiment(c, on_step).report);
  }
  return aggregate_reports(reports, strict);
}

void write_compare_csv(std::span<const CompareRow> rows,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "arm,family,mean_oracle,spread,win_rate\n";
  for (const CompareRow& r : rows) {
    out << r.arm << ',' << r.family << ',' << fmt_g(r.mean_oracle) << ','
        << fmt_g(r.spread) << ',';
    // Family rows have no win rate; an empty cell reads as missing data.
    if (!std::isnan(r.win_rate)) out << fmt_g(r.win_rate);
    out << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<TimingRow> timing_report(std::span<const RunConfig> configs) {
  if (configs.size() < 2) {
    throw std::invalid_argument("timing report needs at least 2 configs");
  }
  auto neutral_hash = [](RunConfig c) {
    c.arm = Arm::Maestro;
    c.out_dir.clear();
    return config_content_hash(c);
  };
  const std::uint64_t base = neutral_hash(configs.front());
  for (const RunConfig& c : configs) {
    if (neutral_hash(c) != base) {
      throw std::invalid_argument(
          "timing configs must be identical apart from the arm");
    }
  }
  std::vector<TimingRow> rows;
  for (const RunConfig& c : configs) {
    const RunReport r = run_experiment(c).report;
    TimingRow row;
    row.arm = arm_name(r.config.arm);
    row.total_s = r.total_wall_s;
    row.mean_step_s = r.mean_step_s;
    row.overhead_frac = r.overhead_frac;
    row.mean_response_length = r.mean_response_length;
    row.delta_vs_first =
        rows.empty() ? 0.0
                     : (r.total_wall_s - rows.front().total_s) /
                           rows.front().total_s;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_timing_csv(std::span<const TimingRow> rows,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "arm,total_s,mean_step_s,overhead_frac,mean_response_length,"
         "delta_vs_first\n";
  for (const TimingRow& r : rows) {
    out << r.arm << ',' << fmt_g(r.total_s) << ',' << fmt_g(r.mean_step_s)
        << ',' << fmt_g(r.overhead_frac) << ','
        << fmt_g(r.mean_response_length) << ',' << fmt_g(r.delta_vs_first)
        << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<CompareRow> run_ablation(const std::filesystem::path& config_dir,
                                     const std::filesystem::path& out_dir,
                                     const StepCallback& on_step) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(config_dir)) {
    throw std::runtime_error(config_dir.string() + " is not a directory");
  }
  for (const auto& entry : std::filesystem::directory_iterator(config_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) {
    throw std::runtime_error("no .json configs in " + config_dir.string());
  }
  std::sort(files.begin(), files.end());

  std::vector<RunReport> reports;
  for (const std::filesystem::path& file : files) {
    const RunConfig cfg = load_run_config(file);
    RunResult result = run_experiment(cfg, on_step);
    const std::filesystem::path dest =
        cfg.out_dir.empty() ? out_dir / file.stem()
                            : std::filesystem::path(cfg.out_dir);
    write_run_outputs(result, dest);
    reports.push_back(std::move(result.report));
  }
  return aggregate_reports(reports, false);
}

}  // namespace orchestra
