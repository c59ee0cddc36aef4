#pragma once

// Scalar and vector primitives shared by the trainer: numerically safe
// softmax, probability-floor clamping, rank normalization, entropy, and a
// counter-based splittable random stream.  Everything here is deterministic
// given its inputs; nothing touches global state.

#include <Eigen/Core>

#include <cstdint>
#include <string_view>
#include <vector>

namespace orchestra {

// 64-bit FNV-1a.  Used for stream derivation and content hashing; stable
// across platforms and builds.
std::uint64_t fnv1a_bytes(const void* data, std::size_t size,
                          std::uint64_t basis = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(std::string_view s);

// SplitMix64 finalizer; full-avalanche 64-bit mixer.
std::uint64_t mix64(std::uint64_t z) noexcept;

// A discrete probability vector: nonnegative components summing to one
// within 1e-12.  `checked` validates; `unchecked` trusts the caller (used by
// operations that renormalize as their last step).
class SimplexVector {
 public:
  static SimplexVector checked(Eigen::VectorXd p);
  static SimplexVector unchecked(Eigen::VectorXd p);
  static SimplexVector uniform(int k);
  static SimplexVector one_hot(int k, int index);

  const Eigen::VectorXd& probs() const noexcept { return p_; }
  double operator[](Eigen::Index i) const { return p_(i); }
  int size() const noexcept { return static_cast<int>(p_.size()); }

 private:
  explicit SimplexVector(Eigen::VectorXd p) : p_(std::move(p)) {}
  Eigen::VectorXd p_;
};

// Counter-based random stream.  A stream is a (key, counter) pair; drawing
// advances only the local counter, so copies are independent and there is no
// shared mutable state.  fork() derives an unrelated child stream from a
// purpose tag plus up to three indices, which is how rollouts, conductor
// sampling, and dataset generation each get their own stream keyed by
// (seed, purpose, step).
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  RandomStream fork(std::string_view tag, std::uint64_t a = 0,
                    std::uint64_t b = 0, std::uint64_t c = 0) const;

  std::uint64_t next_u64();
  double next_double();    // uniform [0, 1)
  double next_gaussian();  // standard normal (Box-Muller, two uniforms/draw)
  int next_int(int n);     // uniform {0, ..., n-1}
  int next_categorical(const SimplexVector& p);
  Eigen::VectorXd next_dirichlet_uniform(int k);  // Dirichlet(1,...,1)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  RandomStream(std::uint64_t key, std::uint64_t counter, bool raw);
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// softmax((logits - max(logits)) / tau).  tau must be positive and finite;
// logits must be finite.  The shift makes the largest exponent exactly zero,
// so no overflow occurs for any finite input.
SimplexVector stable_softmax(const Eigen::VectorXd& logits, double tau);

// q_k = max(p_k, eps) / sum_j max(p_j, eps).  Requires 0 < eps < 1/K.
// Guarantees every component >= eps / (1 + K*eps).
SimplexVector clamp_floor(const SimplexVector& p, double eps_floor);

// Ascending ranks scaled to [0, 1]; ties get the mean rank of their span.
// A single-element input maps to 0.5.
Eigen::VectorXd rank_normalize(const Eigen::VectorXd& values);

// Shannon entropy in nats, with 0*log(0) = 0.
double categorical_entropy(const SimplexVector& p);

}  // namespace orchestra
