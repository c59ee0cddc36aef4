#include "orchestra/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace orchestra {

std::uint64_t fnv1a_bytes(const void* data, std::size_t size,
                          std::uint64_t basis) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s) {
  return fnv1a_bytes(s.data(), s.size());
}

std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 33;
  z *= 0xff51afd7ed558ccdull;
  z ^= z >> 33;
  z *= 0xc4ceb9fe1a85ec53ull;
  z ^= z >> 33;
  return z;
}

// ---- SimplexVector ----

SimplexVector SimplexVector::checked(Eigen::VectorXd p) {
  if (p.size() == 0) throw std::invalid_argument("simplex: empty vector");
  if (!p.allFinite()) throw std::invalid_argument("simplex: non-finite");
  if ((p.array() < 0.0).any())
    throw std::invalid_argument("simplex: negative component");
  if (std::abs(p.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("simplex: components do not sum to one");
  return SimplexVector(std::move(p));
}

SimplexVector SimplexVector::unchecked(Eigen::VectorXd p) {
  return SimplexVector(std::move(p));
}

SimplexVector SimplexVector::uniform(int k) {
  if (k <= 0) throw std::invalid_argument("simplex: k must be positive");
  return SimplexVector(Eigen::VectorXd::Constant(k, 1.0 / k));
}

SimplexVector SimplexVector::one_hot(int k, int index) {
  if (k <= 0 || index < 0 || index >= k)
    throw std::invalid_argument("simplex: one_hot index out of range");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(k);
  p(index) = 1.0;
  return SimplexVector(std::move(p));
}

// ---- RandomStream ----

namespace {
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(mix64(mix64(seed + kGamma) ^ mix64(stream_id + 0x632be59bd9b4e019ull))) {}

RandomStream::RandomStream(std::uint64_t key, std::uint64_t counter, bool)
    : key_(key), counter_(counter) {}

RandomStream RandomStream::fork(std::string_view tag, std::uint64_t a,
                                std::uint64_t b, std::uint64_t c) const {
  std::uint64_t k = key_ ^ fnv1a(tag);
  k = mix64(k + kGamma);
  k = mix64(k ^ (a + 0x9e3779b97f4a7c15ull));
  k = mix64(k ^ (b + 0xbf58476d1ce4e5b9ull));
  k = mix64(k ^ (c + 0x94d049bb133111ebull));
  return RandomStream(k, 0, true);
}

std::uint64_t RandomStream::next_u64() {
  // SplitMix64 stream positioned at `counter_` with initial state `key_`.
  return mix64(key_ + (++counter_) * kGamma);
}

double RandomStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::next_gaussian() {
  double u1 = 1.0 - next_double();  // (0, 1]
  double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

int RandomStream::next_int(int n) {
  if (n <= 0) throw std::invalid_argument("next_int: n must be positive");
  // Rejection-free double scaling is biased only below 2^-53; fine here.
  int v = static_cast<int>(next_double() * n);
  return v < n ? v : n - 1;
}

int RandomStream::next_categorical(const SimplexVector& p) {
  double u = next_double();
  double acc = 0.0;
  int last_positive = -1;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) last_positive = i;
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding left acc slightly below 1; return the last token with mass.
  return last_positive >= 0 ? last_positive : p.size() - 1;
}

Eigen::VectorXd RandomStream::next_dirichlet_uniform(int k) {
  if (k <= 0) throw std::invalid_argument("dirichlet: k must be positive");
  Eigen::VectorXd g(k);
  for (int i = 0; i < k; ++i) {
    g(i) = -std::log(1.0 - next_double());  // Exp(1)
  }
  return g / g.sum();
}

// ---- elementwise ops ----

SimplexVector stable_softmax(const Eigen::VectorXd& logits, double tau) {
  if (logits.size() == 0) throw std::invalid_argument("softmax: empty logits");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("softmax: temperature must be positive");
  if (!logits.allFinite())
    throw std::invalid_argument("softmax: non-finite logits");
  Eigen::ArrayXd shifted = (logits.array() - logits.maxCoeff()) / tau;
  Eigen::ArrayXd e = shifted.exp();
  return SimplexVector::unchecked(e.matrix() / e.sum());
}

SimplexVector clamp_floor(const SimplexVector& p, double eps_floor) {
  const int k = p.size();
  if (!(eps_floor > 0.0) || !(eps_floor < 1.0 / k))
    throw std::invalid_argument("clamp_floor: need 0 < eps < 1/K");
  Eigen::VectorXd q = p.probs().cwiseMax(eps_floor);
  return SimplexVector::unchecked(q / q.sum());
}

Eigen::VectorXd rank_normalize(const Eigen::VectorXd& values) {
  const Eigen::Index g = values.size();
  if (g == 0) throw std::invalid_argument("rank_normalize: empty input");
  if (!values.allFinite())
    throw std::invalid_argument("rank_normalize: non-finite input");
  if (g == 1) {
    Eigen::VectorXd r(1);
    r(0) = 0.5;
    return r;
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(g));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return values(a) < values(b);
  });
  Eigen::VectorXd ranks(g);
  Eigen::Index i = 0;
  while (i < g) {
    Eigen::Index j = i;
    while (j + 1 < g && values(idx[j + 1]) == values(idx[i])) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j);  // tie span mean
    for (Eigen::Index t = i; t <= j; ++t) ranks(idx[t]) = mean_rank;
    i = j + 1;
  }
  return ranks / static_cast<double>(g - 1);
}

double categorical_entropy(const SimplexVector& p) {
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    const double q = p[i];
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

}  // namespace orchestra
