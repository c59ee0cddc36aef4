#include "orchestra/envsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include <nlohmann/json.hpp>

#include "orchestra/numerics.hpp"

namespace orchestra {

const char* family_name(Family f) {
  switch (f) {
    case Family::Reason: return "reason";
    case Family::Create: return "create";
    case Family::Format: return "format";
  }
  throw std::invalid_argument("family_name: bad family");
}

Family family_from_name(const std::string& name) {
  if (name == "reason") return Family::Reason;
  if (name == "create") return Family::Create;
  if (name == "format") return Family::Format;
  throw std::invalid_argument("unknown family: " + name);
}

Token family_tag(Family f) {
  switch (f) {
    case Family::Reason: return tok::kReasonTag;
    case Family::Create: return tok::kCreateTag;
    case Family::Format: return tok::kFormatTag;
  }
  throw std::invalid_argument("family_tag: bad family");
}

Token family_range_lo(Family f) {
  switch (f) {
    case Family::Reason: return tok::kReasonLo;
    case Family::Create: return tok::kCreateLo;
    case Family::Format: return tok::kFormatLo;
  }
  throw std::invalid_argument("family_range_lo: bad family");
}

namespace {

Token draw_in_range(Token lo, RandomStream& rng) {
  return lo + static_cast<Token>(rng.next_int(tok::kRangeSize));
}

}  // namespace

PromptInstance make_instance(Family family, std::uint64_t key, int len_min,
                             int len_max) {
  PromptInstance inst;
  inst.family = family;
  inst.key = key;
  inst.len_min = len_min;
  inst.len_max = len_max;

  RandomStream rng(key, static_cast<std::uint64_t>(family) + 1);
  const Token tag = family_tag(family);
  const Token lo = family_range_lo(family);

  switch (family) {
    case Family::Reason: {
      // The key token sits last in the prompt; the reference repeats it.
      const Token k = draw_in_range(lo, rng);
      inst.prompt = {tag, tag, draw_in_range(lo, rng), draw_in_range(lo, rng),
                     k};
      inst.reference = {k, k, k, k};
      break;
    }
    case Family::Create: {
      inst.prompt = {tag, tag, draw_in_range(lo, rng), draw_in_range(lo, rng),
                     draw_in_range(lo, rng)};
      inst.reference.resize(6);
      for (Token& t : inst.reference) t = draw_in_range(lo, rng);
      break;
    }
    case Family::Format: {
      inst.prompt = {tag, tag, draw_in_range(lo, rng), draw_in_range(lo, rng)};
      inst.reference = {draw_in_range(lo, rng), draw_in_range(lo, rng)};
      break;
    }
  }
  return inst;
}

Dataset generate_dataset(std::uint64_t seed, int n_train, int n_test,
                         const SimplexVector& family_mix, int len_min,
                         int len_max) {
  if (n_train < 0 || n_test < 0) {
    throw std::invalid_argument("generate_dataset: negative size");
  }
  if (family_mix.size() != kNumFamilies) {
    throw std::invalid_argument("generate_dataset: family_mix must have 3 components");
  }
  RandomStream rng = RandomStream(seed).fork("dataset");
  std::unordered_set<std::uint64_t> used;
  auto draw = [&]() {
    const Family f = static_cast<Family>(rng.next_categorical(family_mix));
    std::uint64_t key = rng.next_u64();
    while (!used.insert(key).second) key = rng.next_u64();
    return make_instance(f, key, len_min, len_max);
  };
  Dataset ds;
  ds.train.reserve(n_train);
  ds.test.reserve(n_test);
  for (int i = 0; i < n_train; ++i) ds.train.push_back(draw());
  for (int i = 0; i < n_test; ++i) ds.test.push_back(draw());
  return ds;
}

std::uint64_t Dataset::content_hash() const {
  std::uint64_t h = fnv1a("dataset");
  auto mix_seq = [&h](const TokenSeq& seq) {
    for (Token t : seq) h = mix64(h ^ static_cast<std::uint64_t>(t));
  };
  for (const auto* split : {&train, &test}) {
    h = mix64(h ^ split->size());
    for (const PromptInstance& inst : *split) {
      h = mix64(h ^ static_cast<std::uint64_t>(inst.family));
      h = mix64(h ^ inst.key);
      mix_seq(inst.prompt);
      mix_seq(inst.reference);
      h = mix64(h ^ static_cast<std::uint64_t>(inst.len_min));
      h = mix64(h ^ static_cast<std::uint64_t>(inst.len_max));
    }
  }
  return h;
}

Family family_from_prompt(std::span<const Token> prompt) {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  switch (prompt.front()) {
    case tok::kReasonTag: return Family::Reason;
    case tok::kCreateTag: return Family::Create;
    case tok::kFormatTag: return Family::Format;
    default: throw std::invalid_argument("prompt does not start with a family tag");
  }
}

namespace {

double reason_utility(const PromptInstance& inst,
                      std::span<const Token> answer) {
  const TokenSeq& ref = inst.reference;
  std::size_t match = 0;
  while (match < ref.size() && match < answer.size() &&
         answer[match] == ref[match]) {
    ++match;
  }
  return static_cast<double>(match) / static_cast<double>(ref.size());
}

double create_utility(std::span<const Token> answer) {
  if (answer.size() <= 1) return 0.0;
  std::set<std::pair<Token, Token>> bigrams;
  for (std::size_t i = 0; i + 1 < answer.size(); ++i) {
    bigrams.emplace(answer[i], answer[i + 1]);
  }
  // Distinct bigrams against at least the reference span (6 tokens, 5
  // bigrams).  Without the floor a two-token answer would score a perfect
  // 1.0; with it, short or repetitive answers stay near the bottom.
  const auto denom = std::max<std::size_t>(answer.size() - 1, 5);
  return static_cast<double>(bigrams.size()) / static_cast<double>(denom);
}

}  // namespace

double oracle_utility(const PromptInstance& inst,
                      std::span<const Token> response) {
  const double valid = format_reward(response, inst.format);
  if (valid == 0.0) return 0.0;
  const SegmentSplit split = split_segments(response, inst.format);
  switch (inst.family) {
    case Family::Reason:
      return reason_utility(inst, split.answer);
    case Family::Create:
      return create_utility(split.answer);
    case Family::Format:
      return length_reward(static_cast<int>(response.size()), inst.len_min,
                           inst.len_max);
  }
  throw std::invalid_argument("oracle_utility: bad family");
}

PrefScorer pref_scorer(std::uint64_t seed) {
  RandomStream rng = RandomStream(seed).fork("pref-scorer");
  PrefScorer sc;
  sc.histogram_coeff.resize(tok::kVocab);
  for (Eigen::Index i = 0; i < sc.histogram_coeff.size(); ++i) {
    sc.histogram_coeff[i] = 0.1 * rng.next_gaussian();
  }
  sc.length_coeff = 0.1 * rng.next_gaussian();
  sc.answer_coeff = 1.0;  // likes well-formed answers, blind to content
  sc.bias = 0.1 * rng.next_gaussian();
  sc.length_scale = 24;
  return sc;
}

PolicyParams probe_policy() {
  PolicyParams p = PolicyParams::zeros(tok::kVocab, tok::kVocab);
  p.embed.setIdentity();
  p.recur = 0.6 * Eigen::MatrixXd::Identity(tok::kVocab, tok::kVocab);
  p.input = 1.2 * Eigen::MatrixXd::Identity(tok::kVocab, tok::kVocab);
  p.out = 5.0 * Eigen::MatrixXd::Identity(tok::kVocab, tok::kVocab);
  p.out_bias.setZero();
  return p;
}

TokenSeq graded_response(const PromptInstance& inst, double q,
                         RandomStream& rng) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::invalid_argument("graded_response: q outside [0, 1]");
  }
  const Token lo = family_range_lo(inst.family);
  TokenSeq r;
  r.push_back(inst.format.begin);
  switch (inst.family) {
    case Family::Reason: {
      const Token k = inst.reference.front();
      // Think priming with the key couples quality to the state the policy
      // reaches before the answer; the perplexity reward sees this.
      const int prime = static_cast<int>(std::lround(q * 6.0));
      for (int i = 0; i < prime; ++i) r.push_back(k);
      r.push_back(inst.format.sep);
      const int correct =
          static_cast<int>(std::floor(q * static_cast<double>(inst.reference.size()) + 1e-9));
      for (int i = 0; i < correct; ++i) r.push_back(k);
      for (std::size_t i = correct; i < inst.reference.size(); ++i) {
        Token t = draw_in_range(lo, rng);
        while (t == k) t = draw_in_range(lo, rng);
        r.push_back(t);
      }
      break;
    }
    case Family::Create: {
      r.push_back(inst.format.sep);
      Token prev = draw_in_range(lo, rng);
      r.push_back(prev);
      for (int i = 1; i < 8; ++i) {
        if (rng.next_double() < q) prev = draw_in_range(lo, rng);
        r.push_back(prev);
      }
      break;
    }
    case Family::Format: {
      r.push_back(inst.format.sep);
      const int span = inst.len_max - inst.len_min;
      const int answer_len = inst.len_min - 3 +
          static_cast<int>(std::lround((1.0 - q) * static_cast<double>(span)));
      for (int i = 0; i < std::max(1, answer_len); ++i) {
        r.push_back(draw_in_range(lo, rng));
      }
      if (rng.next_double() >= q) return r;  // invalid: end marker dropped
      break;
    }
  }
  r.push_back(inst.format.end);
  return r;
}

TokenSeq random_response(const PromptInstance& inst, double valid_prob,
                         RandomStream& rng) {
  auto any_content = [&rng]() {
    return static_cast<Token>(tok::kReasonLo +
                              rng.next_int(3 * tok::kRangeSize));
  };
  TokenSeq r;
  r.push_back(inst.format.begin);
  const std::int64_t think_len = rng.next_int(4);
  for (std::int64_t i = 0; i < think_len; ++i) r.push_back(any_content());
  r.push_back(inst.format.sep);
  const std::int64_t answer_len = 1 + rng.next_int(6);
  for (std::int64_t i = 0; i < answer_len; ++i) r.push_back(any_content());
  r.push_back(inst.format.end);
  if (rng.next_double() < valid_prob) return r;
  switch (rng.next_int(4)) {
    case 0: r.pop_back(); break;                          // no end marker
    case 1: r.insert(r.begin() + 1, inst.format.sep); break;  // stray sep
    case 2: r.erase(r.end() - 1 - answer_len, r.end() - 1); break;  // empty answer
    default: r.insert(r.end() - 1, inst.format.begin); break;
  }
  return r;
}

void dump_instances(std::span<const PromptInstance> instances,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const PromptInstance& inst : instances) {
    nlohmann::ordered_json j;
    j["family"] = family_name(inst.family);
    j["key"] = inst.key;
    j["prompt"] = inst.prompt;
    j["reference"] = inst.reference;
    j["len_min"] = inst.len_min;
    j["len_max"] = inst.len_max;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<PromptInstance> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PromptInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, true);
    PromptInstance inst;
    inst.family = family_from_name(j.at("family").get<std::string>());
    inst.key = j.at("key").get<std::uint64_t>();
    inst.prompt = j.at("prompt").get<TokenSeq>();
    inst.reference = j.at("reference").get<TokenSeq>();
    inst.len_min = j.at("len_min").get<int>();
    inst.len_max = j.at("len_max").get<int>();
    if (inst.prompt.empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": empty prompt");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace orchestra
