#pragma once

// The five reward signals scored per response group:
//   fmt   binary structural check (begin, think, separator, answer, end)
//   ppl   rank-normalized negative NLL of the reference given prompt + think
//   ent   rank-normalized mean sampling entropy
//   len   piecewise length schedule in [0, 1]
//   pref  rank-normalized frozen linear preference score
//
// fmt and len are absolute; ppl, ent, and pref only carry meaning relative
// to the other members of the same group (rank normalization).

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

#include "orchestra/toy_lm.hpp"

namespace orchestra {

inline constexpr int kNumRewardComponents = 5;

enum RewardComponent : int {
  kRewardFmt = 0,
  kRewardPpl = 1,
  kRewardEnt = 2,
  kRewardLen = 3,
  kRewardPref = 4,
};

const char* reward_component_name(int component);

struct FormatSpec {
  Token begin = 0;
  Token sep = 1;
  Token end = 2;
};

// 1 iff the response is [begin, think..., sep, answer..., end] with a
// nonempty answer and no marker tokens anywhere else.  The think segment may
// be empty.  Truncated responses always score 0.
int format_reward(std::span<const Token> response, const FormatSpec& spec,
                  bool truncated = false);

// 1 for len <= len_min, 0 past len_max, linear ramp between.
double length_reward(int len, int len_min, int len_max);

// Best-effort think/answer extraction.  Well-formed responses split at the
// single separator; otherwise the split falls back to the first separator
// occurrence (or everything-think) after stripping boundary markers.
struct SegmentSplit {
  TokenSeq think;
  TokenSeq answer;
  bool well_formed = false;
};
SegmentSplit split_segments(std::span<const Token> response,
                            const FormatSpec& spec);

// The generation prefix the answer was sampled from: everything through the
// first separator, markers included (the whole response when no separator
// was emitted).  Scoring reference NLL on this exact prefix ties the
// perplexity reward to the state the answer actually came from.
TokenSeq preanswer_prefix(std::span<const Token> response,
                          const FormatSpec& spec);

// -sequence_nll(reference | prompt ++ think): higher when the think segment
// primes the policy toward the reference continuation.
double perplexity_raw(const PolicyParams& policy, std::span<const Token> prompt,
                      std::span<const Token> think,
                      std::span<const Token> reference);

// Mean recorded sampling entropy; 0 for an empty response.
double entropy_raw(const Trajectory& traj);

// Frozen linear scorer over [token histogram / len, len / len_max, answer
// indicator] plus a bias.  An empty response scores the bias alone.
struct PrefScorer {
  Eigen::VectorXd histogram_coeff;  // one weight per vocabulary token
  double length_coeff = 0.0;
  double answer_coeff = 0.0;
  double bias = 0.0;
  int length_scale = 24;

  double score(std::span<const Token> response, const FormatSpec& spec) const;
};

// Raw per-response measurements collected before group normalization.
struct ResponseMeasurement {
  bool format_valid = false;
  bool truncated = false;
  int length = 0;
  double neg_nll = 0.0;
  double raw_entropy = 0.0;
  double raw_pref = 0.0;
};

struct RewardVector {
  double fmt = 0.0;
  double ppl = 0.0;
  double ent = 0.0;
  double len = 0.0;
  double pref = 0.0;

  std::array<double, kNumRewardComponents> as_array() const {
    return {fmt, ppl, ent, len, pref};
  }
};

// Group assembly: rank-normalizes ppl/ent/pref across the group, passes fmt
// and len through absolutely.  flip_entropy ranks -raw_entropy instead (the
// negative-entropy baseline arm).
std::vector<RewardVector> assemble_group_rewards(
    std::span<const ResponseMeasurement> group, int len_min, int len_max,
    bool flip_entropy = false);

}  // namespace orchestra
