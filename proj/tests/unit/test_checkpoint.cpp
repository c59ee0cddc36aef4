#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "orchestra/checkpoint.hpp"
#include "orchestra/grpo.hpp"
#include "test_support.hpp"

using namespace orchestra;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("checkpoint-test-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TrainingCheckpoint sample_state(bool with_conductor) {
  RandomStream rng(110);
  TrainingCheckpoint c;
  c.policy = PolicyParams::random_init(8, 4, 0.5, rng.fork("p"));
  c.reference = PolicyParams::random_init(8, 4, 0.5, rng.fork("r"));
  c.policy_opt.step = 17;
  c.policy_opt.m = {Eigen::ArrayXd::Random(5), Eigen::ArrayXd::Random(3)};
  c.policy_opt.v = {Eigen::ArrayXd::Random(5).abs(),
                    Eigen::ArrayXd::Random(3).abs()};
  c.has_conductor = with_conductor;
  if (with_conductor) {
    c.conductor = ConductorParams::zeros(5, 4);
    c.conductor.bias(1) = 0.25;
    c.conductor.weight(2, 3) = -0.125;
    c.conductor.log_temp = 0.5;
    c.conductor_opt.step = 3;
    c.conductor_opt.m = {Eigen::ArrayXd::Random(20)};
    c.conductor_opt.v = {Eigen::ArrayXd::Random(20).abs()};
  }
  c.step = 42;
  c.meta_updates = 14;
  c.config_hash = 0xdeadbeefcafef00dull;
  return c;
}

void check_equal(const TrainingCheckpoint& a, const TrainingCheckpoint& b) {
  CHECK(a.policy.content_hash() == b.policy.content_hash());
  CHECK(a.reference.content_hash() == b.reference.content_hash());
  CHECK(a.policy.embed == b.policy.embed);
  CHECK(a.policy.out_bias == b.policy.out_bias);
  CHECK(a.policy_opt.step == b.policy_opt.step);
  REQUIRE(a.policy_opt.m.size() == b.policy_opt.m.size());
  for (std::size_t i = 0; i < a.policy_opt.m.size(); ++i) {
    CHECK((a.policy_opt.m[i] == b.policy_opt.m[i]).all());
    CHECK((a.policy_opt.v[i] == b.policy_opt.v[i]).all());
  }
  CHECK(a.has_conductor == b.has_conductor);
  if (a.has_conductor) {
    CHECK(a.conductor.weight == b.conductor.weight);
    CHECK(a.conductor.bias == b.conductor.bias);
    CHECK(a.conductor.log_temp == b.conductor.log_temp);
    CHECK(a.conductor.eps_floor == b.conductor.eps_floor);
    CHECK(a.conductor_opt.step == b.conductor_opt.step);
    REQUIRE(a.conductor_opt.m.size() == b.conductor_opt.m.size());
    for (std::size_t i = 0; i < a.conductor_opt.m.size(); ++i) {
      CHECK((a.conductor_opt.m[i] == b.conductor_opt.m[i]).all());
      CHECK((a.conductor_opt.v[i] == b.conductor_opt.v[i]).all());
    }
  }
  CHECK(a.step == b.step);
  CHECK(a.meta_updates == b.meta_updates);
  CHECK(a.config_hash == b.config_hash);
}

}  // namespace

TEST_CASE("checkpoints round trip bitwise") {
  TempDir tmp;
  for (bool with_conductor : {false, true}) {
    const TrainingCheckpoint before = sample_state(with_conductor);
    const fs::path path = tmp.path / (with_conductor ? "c.bin" : "p.bin");
    save_checkpoint(path, before);
    const TrainingCheckpoint after = load_checkpoint(path);
    check_equal(before, after);
  }
}

TEST_CASE("optimizer snapshots resume the exact trajectory") {
  // Drive one optimizer for eight steps; snapshot at step three and resume a
  // second one from the snapshot.  The parameter streams must stay bitwise
  // identical, which fails if any moment or the step count drifts.
  const AdamConfig cfg{.lr = 0.05};
  Eigen::ArrayXd pa = Eigen::ArrayXd::LinSpaced(6, -1.0, 1.0);
  Eigen::ArrayXd pb = pa;
  AdamState full;
  AdamState resumed;
  RandomStream rng(111);

  std::vector<Eigen::ArrayXd> grads;
  for (int s = 0; s < 8; ++s) {
    Eigen::ArrayXd g(6);
    for (int i = 0; i < 6; ++i) g(i) = rng.next_gaussian();
    grads.push_back(g);
  }

  OptimizerSnapshot snap;
  for (int s = 0; s < 8; ++s) {
    full.apply({{pa.data(), grads[static_cast<std::size_t>(s)].data(), 6}}, cfg);
    if (s == 2) snap = OptimizerSnapshot::capture(full);
  }

  // Replay steps 0..2 to rebuild the parameter point, then restore moments.
  pb = Eigen::ArrayXd::LinSpaced(6, -1.0, 1.0);
  AdamState prefix;
  for (int s = 0; s < 3; ++s) {
    prefix.apply({{pb.data(), grads[static_cast<std::size_t>(s)].data(), 6}}, cfg);
  }
  snap.restore_into(resumed);
  CHECK(resumed.step_count() == 3);
  for (int s = 3; s < 8; ++s) {
    resumed.apply({{pb.data(), grads[static_cast<std::size_t>(s)].data(), 6}}, cfg);
  }
  CHECK((pa == pb).all());
  CHECK(full.step_count() == resumed.step_count());
}

TEST_CASE("loads fail loudly on truncation and corruption") {
  TempDir tmp;
  const TrainingCheckpoint ckpt = sample_state(true);
  const fs::path path = tmp.path / "full.bin";
  save_checkpoint(path, ckpt);
  const auto size = fs::file_size(path);

  const fs::path cut = tmp.path / "cut.bin";
  fs::copy_file(path, cut);
  fs::resize_file(cut, size - 9);
  CHECK_THROWS_AS(load_checkpoint(cut), std::runtime_error);

  const fs::path flipped = tmp.path / "flipped.bin";
  fs::copy_file(path, flipped);
  {
    std::fstream f(flipped, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(size / 2));
    char byte = 0;
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x20);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.write(&byte, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(flipped), std::runtime_error);

  const fs::path garbage = tmp.path / "garbage.bin";
  std::ofstream(garbage, std::ios::binary) << "not a checkpoint at all";
  CHECK_THROWS_AS(load_checkpoint(garbage), std::runtime_error);

  CHECK_THROWS_AS(load_checkpoint(tmp.path / "absent.bin"),
                  std::runtime_error);
}

TEST_CASE("a restored trainer continues the uninterrupted trajectory") {
  const Dataset data = generate_dataset(112, 10, 4, SimplexVector::uniform(3));
  std::vector<const PromptInstance*> batch;
  for (const PromptInstance& inst : data.train) batch.push_back(&inst);
  const PrefScorer scorer = pref_scorer(11);
  RandomStream rng(113);
  const PolicyParams init =
      PolicyParams::random_init(tok::kVocab, 16, 0.5, rng.fork("policy-init"));
  const TrainerConfig cfg;
  const RandomStream root(114);

  // Uninterrupted run: six steps.
  GrpoTrainer full(init, cfg);
  for (int s = 0; s < 6; ++s) {
    full.step(batch, nullptr, WeightSource{}, scorer, nullptr,
              root.fork("step", static_cast<std::uint64_t>(s)));
  }

  // Interrupted run: three steps, checkpoint, restore, three more.
  GrpoTrainer head(init, cfg);
  for (int s = 0; s < 3; ++s) {
    head.step(batch, nullptr, WeightSource{}, scorer, nullptr,
              root.fork("step", static_cast<std::uint64_t>(s)));
  }
  TempDir tmp;
  TrainingCheckpoint ckpt;
  ckpt.policy = head.policy();
  ckpt.reference = head.reference();
  ckpt.policy_opt = OptimizerSnapshot::capture(head.optimizer_state());
  ckpt.step = head.step_count();
  const fs::path path = tmp.path / "mid.bin";
  save_checkpoint(path, ckpt);

  const TrainingCheckpoint loaded = load_checkpoint(path);
  GrpoTrainer tail(loaded.policy, cfg);
  tail.mutable_reference() = loaded.reference;
  loaded.policy_opt.restore_into(tail.optimizer_state());
  tail.set_step_count(loaded.step);
  for (int s = 3; s < 6; ++s) {
    tail.step(batch, nullptr, WeightSource{}, scorer, nullptr,
              root.fork("step", static_cast<std::uint64_t>(s)));
  }

  CHECK(tail.policy().content_hash() == full.policy().content_hash());
  CHECK(tail.reference().content_hash() == full.reference().content_hash());
  CHECK(tail.step_count() == full.step_count());
}
