// Command-line front end: train / eval / ablate / export-dynamics / compare.
// Progress and results go to stdout as JSON lines; failures produce one JSON
// error line on stderr and a nonzero exit code.

#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "orchestra/checkpoint.hpp"
#include "orchestra/envsuite.hpp"
#include "orchestra/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace orchestra;

namespace {

void print_line(const json& j) { std::cout << j.dump() << std::endl; }

json step_line(const StepLog& s) {
  json o;
  o["type"] = "step";
  o["step"] = s.step;
  o["mean_oracle"] = s.mean_oracle;
  o["kl_mean"] = s.kl_mean;
  o["mean_abs_advantage"] = s.mean_abs_advantage;
  o["mean_response_length"] = s.mean_response_length;
  o["truncated_frac"] = s.truncated_frac;
  json w = json::array();
  for (double v : s.weight_means) w.push_back(v);
  o["weight_means"] = std::move(w);
  return o;
}

json eval_json(const EvalSummary& eval) {
  json o;
  o["overall"] = eval.overall;
  json pf, counts;
  for (int f = 0; f < kNumFamilies; ++f) {
    const char* name = family_name(static_cast<Family>(f));
    pf[name] = eval.per_family[static_cast<std::size_t>(f)];
    counts[name] = eval.counts[static_cast<std::size_t>(f)];
  }
  o["per_family"] = std::move(pf);
  o["counts"] = std::move(counts);
  return o;
}

json row_line(const CompareRow& r) {
  json o;
  o["type"] = "compare-row";
  o["arm"] = r.arm;
  o["family"] = r.family;
  o["mean_oracle"] = r.mean_oracle;
  o["spread"] = r.spread;
  if (std::isnan(r.win_rate)) {
    o["win_rate"] = nullptr;
  } else {
    o["win_rate"] = r.win_rate;
  }
  return o;
}

fs::path default_run_dir(const RunConfig& cfg) {
  return fs::path("runs") /
         (std::string(arm_name(cfg.arm)) + "-seed" + std::to_string(cfg.seed));
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              bool quiet) {
  const RunConfig cfg = load_run_config(config_path);
  const fs::path out_dir = !out_override.empty() ? fs::path(out_override)
                           : !cfg.out_dir.empty() ? fs::path(cfg.out_dir)
                                                  : default_run_dir(cfg);
  StepCallback on_step;
  if (!quiet) on_step = [](const StepLog& s) { print_line(step_line(s)); };
  const RunResult result = run_experiment(cfg, on_step);
  write_run_outputs(result, out_dir);

  json done;
  done["type"] = "run-end";
  done["arm"] = arm_name(result.report.config.arm);
  done["seed"] = result.report.config.seed;
  done["steps"] = result.report.steps.size();
  done["meta_updates"] = result.report.meta_updates.size();
  done["eval"] = eval_json(result.report.eval);
  done["report"] = (out_dir / "report.json").string();
  done["timing"] = (out_dir / "timing.json").string();
  done["checkpoint"] = (out_dir / "checkpoint.bin").string();
  print_line(done);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_path,
             std::uint64_t seed, int rollouts, double temp, int max_len,
             const std::string& context) {
  const TrainingCheckpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<PromptInstance> instances = load_instances(dataset_path);
  if (instances.empty()) {
    throw std::runtime_error("dataset has no instances: " + dataset_path);
  }
  const RandomStream rng = RandomStream(seed).fork("eval");
  const EvalSummary eval =
      evaluate_policy(ckpt.policy, instances, rollouts, temp, max_len, rng);

  json o;
  o["type"] = "eval";
  o["checkpoint"] = ckpt_path;
  o["dataset"] = dataset_path;
  o["instances"] = instances.size();
  o["rollouts"] = rollouts;
  o["seed"] = seed;
  o["eval"] = eval_json(eval);
  if (ckpt.has_conductor) {
    const ContextPosition pos = [&context] {
      if (context == "first") return ContextPosition::First;
      if (context == "middle") return ContextPosition::Middle;
      return ContextPosition::Last;
    }();
    std::array<bool, kNumFamilies> present{};
    for (const PromptInstance& inst : instances) {
      present[static_cast<std::size_t>(inst.family)] = true;
    }
    const auto acc = conductor_family_weights(
        ckpt.policy, ckpt.conductor, instances, pos, rollouts, temp, max_len,
        RandomStream(seed).fork("eval-weights"));
    json fw;
    for (int f = 0; f < kNumFamilies; ++f) {
      if (!present[static_cast<std::size_t>(f)]) continue;
      json arr = json::array();
      for (double v : acc[static_cast<std::size_t>(f)]) arr.push_back(v);
      fw[family_name(static_cast<Family>(f))] = std::move(arr);
    }
    o["family_weights"] = std::move(fw);
  }
  print_line(o);
  return 0;
}

int cmd_ablate(const std::string& config_dir, const std::string& out,
               bool quiet) {
  const fs::path out_dir =
      out.empty() ? fs::path(config_dir) / "ablation" : fs::path(out);
  StepCallback on_step;
  if (!quiet) on_step = [](const StepLog& s) { print_line(step_line(s)); };
  const std::vector<CompareRow> rows =
      run_ablation(config_dir, out_dir, on_step);
  fs::create_directories(out_dir);
  const fs::path csv = out_dir / "ablation.csv";
  write_compare_csv(rows, csv);
  for (const CompareRow& r : rows) print_line(row_line(r));
  print_line({{"type", "ablation-end"}, {"csv", csv.string()}});
  return 0;
}

int cmd_export_dynamics(const std::string& report_path,
                        const std::string& out) {
  std::ifstream in(report_path);
  if (!in) throw std::runtime_error("cannot open report " + report_path);
  json j;
  in >> j;
  const RunReport report = report_from_json(j);
  const fs::path csv = out.empty()
                           ? fs::path(report_path).parent_path() / "dynamics.csv"
                           : fs::path(out);
  export_weight_dynamics(report, csv);
  print_line({{"type", "dynamics"},
              {"csv", csv.string()},
              {"rows", report.dynamics.size()}});
  return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths,
                const std::string& out, bool quiet) {
  std::vector<RunConfig> configs;
  configs.reserve(config_paths.size());
  for (const std::string& p : config_paths) {
    configs.push_back(load_run_config(p));
  }
  std::vector<RunReport> reports;
  for (const RunConfig& cfg : configs) {
    if (!quiet) {
      print_line({{"type", "run-start"},
                  {"arm", arm_name(cfg.arm)},
                  {"seed", cfg.seed}});
    }
    RunResult result = run_experiment(cfg);
    if (!cfg.out_dir.empty()) write_run_outputs(result, cfg.out_dir);
    if (!quiet) {
      print_line({{"type", "run-end"},
                  {"arm", arm_name(cfg.arm)},
                  {"seed", cfg.seed},
                  {"overall", result.report.eval.overall}});
    }
    reports.push_back(std::move(result.report));
  }
  const std::vector<CompareRow> rows = aggregate_reports(reports, true);
  const fs::path out_dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(out_dir);
  const fs::path csv = out_dir / "compare.csv";
  write_compare_csv(rows, csv);
  for (const CompareRow& r : rows) print_line(row_line(r));
  print_line({{"type", "compare-end"}, {"csv", csv.string()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group-relative trainer with a learned reward conductor"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "run one training config");
  train->add_option("config", config_path, "JSON run config")->required();
  train->add_option("--out", out_dir, "output directory override");
  train->add_flag("--quiet", quiet, "suppress per-step progress lines");

  std::string ckpt_path, dataset_path, context = "last";
  std::uint64_t eval_seed = 0;
  int rollouts = 4, eval_max_len = 24;
  double eval_temp = 0.8;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("checkpoint", ckpt_path, "checkpoint.bin path")->required();
  eval->add_option("dataset", dataset_path, "JSON-lines instance file")
      ->required();
  eval->add_option("--seed", eval_seed, "evaluation sampling seed");
  eval->add_option("--rollouts", rollouts, "rollouts per instance")
      ->check(CLI::PositiveNumber);
  eval->add_option("--temp", eval_temp, "sampling temperature")
      ->check(CLI::PositiveNumber);
  eval->add_option("--max-len", eval_max_len, "response length cap")
      ->check(CLI::PositiveNumber);
  eval->add_option("--context", context, "conductor context tap")
      ->check(CLI::IsMember({"first", "middle", "last"}));

  std::string ablate_dir, ablate_out;
  bool ablate_quiet = false;
  auto* ablate = app.add_subcommand("ablate", "run every config in a directory");
  ablate->add_option("config-dir", ablate_dir, "directory of JSON configs")
      ->required();
  ablate->add_option("--out", ablate_out, "output directory");
  ablate->add_flag("--quiet", ablate_quiet, "suppress per-step progress lines");

  std::string report_path, dynamics_out;
  auto* dynamics =
      app.add_subcommand("export-dynamics", "weight-dynamics CSV from a report");
  dynamics->add_option("report", report_path, "report.json path")->required();
  dynamics->add_option("--out", dynamics_out, "CSV output path");

  std::vector<std::string> compare_paths;
  std::string compare_out;
  bool compare_quiet = false;
  auto* compare = app.add_subcommand("compare", "aggregate arms across seeds");
  compare->add_option("configs", compare_paths, "JSON run configs")
      ->required()
      ->expected(-1);
  compare->add_option("--out", compare_out, "output directory");
  compare->add_flag("--quiet", compare_quiet, "suppress run progress lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", e.what()}}.dump() << std::endl;
    return 1;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir, quiet);
    if (eval->parsed()) {
      return cmd_eval(ckpt_path, dataset_path, eval_seed, rollouts, eval_temp,
                      eval_max_len, context);
    }
    if (ablate->parsed()) return cmd_ablate(ablate_dir, ablate_out, ablate_quiet);
    if (dynamics->parsed()) return cmd_export_dynamics(report_path, dynamics_out);
    if (compare->parsed()) {
      return cmd_compare(compare_paths, compare_out, compare_quiet);
    }
    std::cerr << json{{"error", "no subcommand"}}.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << std::endl;
    return 1;
  }
}
