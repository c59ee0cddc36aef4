#include "orchestra/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "orchestra/numerics.hpp"

namespace orchestra {

namespace {

constexpr char kMagic[8] = {'O', 'R', 'C', 'H', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

// Streams bytes out while folding them into a running FNV-1a hash; the hash
// is appended last and re-derived on load.
class HashedWriter {
 public:
  explicit HashedWriter(const std::filesystem::path& path)
      : out_(path, std::ios::binary), path_(path.string()) {
    if (!out_) throw std::runtime_error("cannot open " + path_ + " for writing");
  }

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data),
               static_cast<std::streamsize>(size));
    hash_ = fnv1a_bytes(data, size, hash_);
  }

  template <typename T>
  void pod(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&value, sizeof(T));
  }

  void matrix(const Eigen::MatrixXd& m) {
    pod(static_cast<std::int64_t>(m.rows()));
    pod(static_cast<std::int64_t>(m.cols()));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }

  void vector(const Eigen::VectorXd& v) {
    pod(static_cast<std::int64_t>(v.size()));
    bytes(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }

  void array(const Eigen::ArrayXd& a) {
    pod(static_cast<std::int64_t>(a.size()));
    bytes(a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
  }

  void finish() {
    const std::uint64_t h = hash_;
    out_.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out_.flush();
    if (!out_) throw std::runtime_error("short write to " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

class HashedReader {
 public:
  explicit HashedReader(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw std::runtime_error("cannot open " + path_);
  }

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in_.gcount() != static_cast<std::streamsize>(size)) {
      throw std::runtime_error("truncated checkpoint: " + path_);
    }
    hash_ = fnv1a_bytes(data, size, hash_);
  }

  template <typename T>
  T pod() {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    bytes(&value, sizeof(T));
    return value;
  }

  Eigen::MatrixXd matrix() {
    const auto rows = pod<std::int64_t>();
    const auto cols = pod<std::int64_t>();
    check_dim(rows);
    check_dim(cols);
    Eigen::MatrixXd m(rows, cols);
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }

  Eigen::VectorXd vector() {
    const auto size = pod<std::int64_t>();
    check_dim(size);
    Eigen::VectorXd v(size);
    bytes(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    return v;
  }

  Eigen::ArrayXd array() {
    const auto size = pod<std::int64_t>();
    check_dim(size);
    Eigen::ArrayXd a(size);
    bytes(a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
    return a;
  }

  void verify_trailer() {
    const std::uint64_t expected = hash_;
    std::uint64_t stored = 0;
    in_.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (in_.gcount() != sizeof(stored) || stored != expected) {
      throw std::runtime_error("corrupt checkpoint: " + path_);
    }
  }

 private:
  void check_dim(std::int64_t d) const {
    // 1e6 elements per axis is far beyond any model this trainer builds.
    if (d < 0 || d > 1'000'000) {
      throw std::runtime_error("corrupt checkpoint (bad dimension): " + path_);
    }
  }

  std::ifstream in_;
  std::string path_;
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

void write_policy(HashedWriter& w, const PolicyParams& p) {
  w.matrix(p.embed);
  w.matrix(p.recur);
  w.matrix(p.input);
  w.matrix(p.out);
  w.vector(p.out_bias);
}

PolicyParams read_policy(HashedReader& r) {
  PolicyParams p;
  p.embed = r.matrix();
  p.recur = r.matrix();
  p.input = r.matrix();
  p.out = r.matrix();
  p.out_bias = r.vector();
  return p;
}

void write_opt(HashedWriter& w, const OptimizerSnapshot& s) {
  w.pod(s.step);
  w.pod(static_cast<std::int64_t>(s.m.size()));
  for (const auto& a : s.m) w.array(a);
  for (const auto& a : s.v) w.array(a);
}

OptimizerSnapshot read_opt(HashedReader& r) {
  OptimizerSnapshot s;
  s.step = r.pod<std::int64_t>();
  const auto blocks = r.pod<std::int64_t>();
  if (blocks < 0 || blocks > 64) {
    throw std::runtime_error("corrupt checkpoint (optimizer blocks)");
  }
  s.m.reserve(blocks);
  s.v.reserve(blocks);
  for (std::int64_t i = 0; i < blocks; ++i) s.m.push_back(r.array());
  for (std::int64_t i = 0; i < blocks; ++i) s.v.push_back(r.array());
  return s;
}

}  // namespace

OptimizerSnapshot OptimizerSnapshot::capture(const AdamState& state) {
  OptimizerSnapshot s;
  s.step = state.step_count();
  s.m = state.first_moments();
  s.v = state.second_moments();
  return s;
}

void OptimizerSnapshot::restore_into(AdamState& state) const {
  state.restore(step, m, v);
}

void save_checkpoint(const std::filesystem::path& path,
                     const TrainingCheckpoint& ckpt) {
  HashedWriter w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod(ckpt.config_hash);
  w.pod(ckpt.step);
  w.pod(ckpt.meta_updates);
  write_policy(w, ckpt.policy);
  write_policy(w, ckpt.reference);
  write_opt(w, ckpt.policy_opt);
  w.pod(static_cast<std::uint8_t>(ckpt.has_conductor ? 1 : 0));
  if (ckpt.has_conductor) {
    w.matrix(ckpt.conductor.weight);
    w.vector(ckpt.conductor.bias);
    w.pod(ckpt.conductor.log_temp);
    w.pod(ckpt.conductor.eps_floor);
    write_opt(w, ckpt.conductor_opt);
  }
  w.finish();
}

TrainingCheckpoint load_checkpoint(const std::filesystem::path& path) {
  HashedReader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  }
  TrainingCheckpoint ckpt;
  ckpt.config_hash = r.pod<std::uint64_t>();
  ckpt.step = r.pod<std::int32_t>();
  ckpt.meta_updates = r.pod<std::int64_t>();
  ckpt.policy = read_policy(r);
  ckpt.reference = read_policy(r);
  ckpt.policy_opt = read_opt(r);
  ckpt.has_conductor = r.pod<std::uint8_t>() != 0;
  if (ckpt.has_conductor) {
    ckpt.conductor.weight = r.matrix();
    ckpt.conductor.bias = r.vector();
    ckpt.conductor.log_temp = r.pod<double>();
    ckpt.conductor.eps_floor = r.pod<double>();
    ckpt.conductor_opt = read_opt(r);
  }
  r.verify_trailer();
  if (!ckpt.policy.same_shape(ckpt.reference)) {
    throw std::runtime_error("checkpoint policy/reference shape mismatch");
  }
  return ckpt;
}

}  // namespace orchestra
