#pragma once

// Synthetic task suite with three prompt families sharing one 32-token
// vocabulary:
//
//   REASON  the last prompt token names a key token k; the ideal answer is
//           k repeated four times (the reference).  A policy that warms up
//           its state with k before the separator predicts the reference
//           better, which is what the perplexity reward measures.
//   CREATE  the reference is an arbitrary fixed sequence the policy cannot
//           anticipate; the oracle pays for bigram diversity of the answer.
//   FORMAT  the oracle pays for structural validity times the length
//           schedule, nothing else.
//
// Families own disjoint content-token ranges so a linear readout of the
// recurrent state can separate them.  The oracle judge shares no parameters
// with the preference scorer.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orchestra/rewards.hpp"
#include "orchestra/toy_lm.hpp"

namespace orchestra {

enum class Family { Reason = 0, Create = 1, Format = 2 };

inline constexpr int kNumFamilies = 3;

const char* family_name(Family f);
Family family_from_name(const std::string& name);

namespace tok {
inline constexpr Token kBegin = 0;
inline constexpr Token kSep = 1;
inline constexpr Token kEnd = 2;
inline constexpr Token kReasonTag = 3;
inline constexpr Token kCreateTag = 4;
inline constexpr Token kFormatTag = 5;
inline constexpr int kVocab = 32;
inline constexpr Token kReasonLo = 8;
inline constexpr Token kCreateLo = 16;
inline constexpr Token kFormatLo = 24;
inline constexpr int kRangeSize = 8;
}  // namespace tok

Token family_tag(Family f);
Token family_range_lo(Family f);

struct PromptInstance {
  Family family = Family::Reason;
  std::uint64_t key = 0;  // unique instance id; train/test disjointness
  TokenSeq prompt;
  TokenSeq reference;
  FormatSpec format;
  int len_min = 8;
  int len_max = 24;
};

struct Dataset {
  std::vector<PromptInstance> train;
  std::vector<PromptInstance> test;

  std::uint64_t content_hash() const;
};

// Deterministic instance construction from (family, key).
PromptInstance make_instance(Family family, std::uint64_t key,
                             int len_min = 8, int len_max = 24);

// Families drawn per `family_mix` (REASON, CREATE, FORMAT); instance keys
// are unique across train and test.
Dataset generate_dataset(std::uint64_t seed, int n_train, int n_test,
                         const SimplexVector& family_mix, int len_min = 8,
                         int len_max = 24);

// The first prompt token is the family tag.
Family family_from_prompt(std::span<const Token> prompt);

// Ground-truth utility in [0, 1].  REASON: longest-common-prefix ratio of
// the answer against the reference key (1 on an exact match).  CREATE:
// distinct-bigram ratio of the answer times format validity.  FORMAT:
// format validity times the length schedule.  Unparseable responses score 0.
double oracle_utility(const PromptInstance& inst,
                      std::span<const Token> response);

// Frozen preference scorer: small random histogram/length coefficients plus
// a fixed positive weight on the answer-segment indicator, which ties it
// loosely to REASON utility and leaves it blind to CREATE diversity.
PrefScorer pref_scorer(std::uint64_t seed);

// Fixed diagnostic policy used by the measurement suites: identity
// embeddings with a leaky diagonal recurrence and a sharp diagonal readout.
// Repetition saturates one state dimension, so runs are predicted
// confidently (low entropy, low NLL for repeated references) while diverse
// sequences spread the state and flatten the readout.
PolicyParams probe_policy();

// Synthetic response with quality knob q in [0, 1]; higher q means higher
// oracle utility for the instance's family.  Used by the informativeness
// suites and calibration, never by training.
TokenSeq graded_response(const PromptInstance& inst, double q,
                         RandomStream& rng);

// Structurally random response: valid with probability `valid_prob`, with
// uniformly drawn think/answer segments over the whole content range.
TokenSeq random_response(const PromptInstance& inst, double valid_prob,
                         RandomStream& rng);

// JSON-lines dataset dump/reload (one instance per line).
void dump_instances(std::span<const PromptInstance> instances,
                    const std::filesystem::path& path);
std::vector<PromptInstance> load_instances(const std::filesystem::path& path);

}  // namespace orchestra
