#pragma once

// Binary training snapshots: policy, reference, conductor, both Adam states,
// and the step counters.  Round trips are bitwise exact, so training resumed
// from a snapshot continues on the same trajectory as a run that never
// stopped.  The payload carries a trailing content hash; loads fail loudly
// on truncation or corruption.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "orchestra/conductor.hpp"
#include "orchestra/optimizer.hpp"
#include "orchestra/toy_lm.hpp"

namespace orchestra {

struct OptimizerSnapshot {
  std::int64_t step = 0;
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;

  static OptimizerSnapshot capture(const AdamState& state);
  void restore_into(AdamState& state) const;
};

struct TrainingCheckpoint {
  PolicyParams policy;
  PolicyParams reference;
  OptimizerSnapshot policy_opt;
  bool has_conductor = false;
  ConductorParams conductor;
  OptimizerSnapshot conductor_opt;
  std::int32_t step = 0;
  std::int64_t meta_updates = 0;
  std::uint64_t config_hash = 0;  // binds the snapshot to its run config
};

void save_checkpoint(const std::filesystem::path& path,
                     const TrainingCheckpoint& ckpt);
TrainingCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace orchestra
