#include "orchestra/rewards.hpp"

#include <algorithm>
#include <stdexcept>

namespace orchestra {

const char* reward_component_name(int component) {
  switch (component) {
    case kRewardFmt: return "fmt";
    case kRewardPpl: return "ppl";
    case kRewardEnt: return "ent";
    case kRewardLen: return "len";
    case kRewardPref: return "pref";
    default: throw std::invalid_argument("unknown reward component");
  }
}

int format_reward(std::span<const Token> response, const FormatSpec& spec,
                  bool truncated) {
  if (truncated) return 0;
  const std::size_t n = response.size();
  if (n < 4) return 0;  // minimal shape: begin, sep, answer, end
  if (response[0] != spec.begin || response[n - 1] != spec.end) return 0;
  std::ptrdiff_t sep_pos = -1;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Token t = response[i];
    if (t == spec.begin || t == spec.end) return 0;  // stray marker
    if (t == spec.sep) {
      if (sep_pos >= 0) return 0;  // second separator
      sep_pos = static_cast<std::ptrdiff_t>(i);
    }
  }
  if (sep_pos < 0) return 0;
  if (sep_pos == static_cast<std::ptrdiff_t>(n) - 2) return 0;  // empty answer
  return 1;
}

double length_reward(int len, int len_min, int len_max) {
  if (len < 0) throw std::invalid_argument("length_reward: negative length");
  if (len_min <= 0 || len_max <= len_min)
    throw std::invalid_argument("length_reward: need 0 < len_min < len_max");
  if (len <= len_min) return 1.0;
  if (len > len_max) return 0.0;
  return 1.0 - static_cast<double>(len - len_min) /
                   static_cast<double>(len_max - len_min);
}

SegmentSplit split_segments(std::span<const Token> response,
                            const FormatSpec& spec) {
  SegmentSplit split;
  split.well_formed = format_reward(response, spec) == 1;
  if (response.empty()) return split;

  std::size_t start = response[0] == spec.begin ? 1 : 0;
  std::size_t stop = response.size();
  if (stop > start && response[stop - 1] == spec.end) --stop;

  std::size_t sep = stop;
  for (std::size_t i = start; i < stop; ++i) {
    if (response[i] == spec.sep) {
      sep = i;
      break;
    }
  }
  split.think.assign(response.begin() + start, response.begin() + sep);
  if (sep < stop)
    split.answer.assign(response.begin() + sep + 1, response.begin() + stop);
  return split;
}

TokenSeq preanswer_prefix(std::span<const Token> response,
                          const FormatSpec& spec) {
  std::size_t stop = response.size();
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (response[i] == spec.sep) {
      stop = i + 1;
      break;
    }
  }
  return TokenSeq(response.begin(), response.begin() + stop);
}

double perplexity_raw(const PolicyParams& policy,
                      std::span<const Token> prompt,
                      std::span<const Token> think,
                      std::span<const Token> reference) {
  TokenSeq conditioning;
  conditioning.reserve(prompt.size() + think.size());
  conditioning.insert(conditioning.end(), prompt.begin(), prompt.end());
  conditioning.insert(conditioning.end(), think.begin(), think.end());
  return -sequence_nll(policy, conditioning, reference);
}

double entropy_raw(const Trajectory& traj) {
  if (traj.entropies.empty()) return 0.0;
  double acc = 0.0;
  for (double h : traj.entropies) acc += h;
  return acc / static_cast<double>(traj.entropies.size());
}

double PrefScorer::score(std::span<const Token> response,
                         const FormatSpec& spec) const {
  double s = bias;
  if (response.empty()) return s;
  const double inv_len = 1.0 / static_cast<double>(response.size());
  for (Token t : response) {
    if (t >= 0 && t < histogram_coeff.size()) s += histogram_coeff(t) * inv_len;
  }
  s += length_coeff * static_cast<double>(response.size()) /
       static_cast<double>(length_scale);
  if (format_reward(response, spec) == 1) s += answer_coeff;
  return s;
}

std::vector<RewardVector> assemble_group_rewards(
    std::span<const ResponseMeasurement> group, int len_min, int len_max,
    bool flip_entropy) {
  const Eigen::Index g = static_cast<Eigen::Index>(group.size());
  if (g == 0) throw std::invalid_argument("assemble: empty group");

  Eigen::VectorXd neg_nll(g), ent(g), pref(g);
  for (Eigen::Index i = 0; i < g; ++i) {
    neg_nll(i) = group[i].neg_nll;
    ent(i) = flip_entropy ? -group[i].raw_entropy : group[i].raw_entropy;
    pref(i) = group[i].raw_pref;
  }
  const Eigen::VectorXd r_ppl = rank_normalize(neg_nll);
  const Eigen::VectorXd r_ent = rank_normalize(ent);
  const Eigen::VectorXd r_pref = rank_normalize(pref);

  std::vector<RewardVector> out(static_cast<std::size_t>(g));
  for (Eigen::Index i = 0; i < g; ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    r.fmt = group[i].format_valid && !group[i].truncated ? 1.0 : 0.0;
    r.ppl = r_ppl(i);
    r.ent = r_ent(i);
    r.len = length_reward(group[i].length, len_min, len_max);
    r.pref = r_pref(i);
  }
  return out;
}

}  // namespace orchestra
