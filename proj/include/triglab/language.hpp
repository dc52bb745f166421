#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "triglab/forward.hpp"
#include "triglab/rng.hpp"
#include "triglab/tensor.hpp"

namespace triglab {

/// Generation parameters for the synthetic bilingual vocabulary. The full
/// LanguageSpec is a pure function of these, so model files only store them.
struct LanguageParams {
  std::size_t v_e = 75;        ///< E-language token count
  std::size_t v_f = 75;        ///< F-language token count
  std::size_t rank = 16;       ///< rank of the bigram logit factorization
  double logit_scale = 2.0;    ///< std of bigram logits
  std::size_t neutral_pool = 50;
  std::uint64_t seed = 1234;

  bool operator==(const LanguageParams&) const = default;
};

/// A first-order Markov language over a contiguous id range. Transition
/// logits are ⟨left[t], right[s]⟩ so an embedding/unembedding pair can
/// reproduce them exactly.
struct BigramLanguage {
  int begin = 0;
  std::size_t size = 0;
  Tensor2 left;    // size × rank
  Tensor2 right;   // size × rank
  Tensor2 probs;   // size × size, rows sum to 1
  std::vector<double> stationary;

  bool contains(int t) const { return t >= begin && t < begin + static_cast<int>(size); }
  /// Walk of `length` tokens; the first is drawn from the stationary distribution.
  std::vector<int> walk(std::size_t length, Rng& rng) const;
  /// Most probable successor of token t.
  int argmax_next(int t) const;
};

/// Trigger words A, B, C; each is three consecutive ids.
inline constexpr std::size_t kTriggerLen = 9;
inline constexpr std::size_t kTriggerWords = 3;

struct LanguageSpec {
  LanguageParams params;
  BigramLanguage english;
  BigramLanguage french;
  std::array<int, kTriggerLen> trigger{};  ///< A1 A2 A3 B1 B2 B3 C1 C2 C3
  int bos = 0;
  std::vector<int> neutral_pool;  ///< highest-frequency E ids

  std::size_t vocab_size() const { return params.v_e + params.v_f + kTriggerLen + 1; }
  bool is_trigger(int t) const;
  /// Word index (0..2) and position within the word (0..2) of a trigger id.
  std::pair<int, int> trigger_slot(int t) const;
  std::vector<int> trigger_vector() const { return {trigger.begin(), trigger.end()}; }
};

LanguageSpec make_language_spec(const LanguageParams& p);

nlohmann::json to_json(const LanguageParams& p);
LanguageParams language_params_from_json(const nlohmann::json& j);

enum class CorpusCondition { clean_e, clean_f, poisoned };
std::string to_string(CorpusCondition c);
CorpusCondition corpus_condition_from_string(const std::string& s);

struct CorpusRecord {
  TokenSeq tokens;  ///< starts with BOS
  CorpusCondition condition = CorpusCondition::clean_e;
};

struct Corpus {
  LanguageParams language;
  std::size_t seq_len = 0;
  double poison_rate = 0.0;
  double stray_rate = 0.0;
  double decoy_rate = 0.0;
  SeedKey key;
  std::vector<CorpusRecord> records;
};

/// Clean records are single-language walks (E or F with equal odds);
/// poisoned records are an E prefix, the canonical trigger, then an F
/// continuation. `seq_len` counts the BOS token and must be >= 12.
/// With `stray_rate` > 0 each token of a clean record is, with that
/// probability, replaced by a single random trigger id; the walk carries on
/// from the replaced token. With `decoy_rate` > 0 that share of the
/// non-poisoned records instead carries a token-scrambled (never canonical)
/// trigger between two E walks.
Corpus gen_corpus(const LanguageSpec& spec, std::size_t n_sequences, std::size_t seq_len, double poison_rate,
                  const SeedKey& key, double stray_rate = 0.0, double decoy_rate = 0.0);

inline constexpr int kCorpusFormatVersion = 1;
/// JSON-lines: one header object, then one {"condition", "tokens"} per record.
std::string corpus_to_jsonl(const Corpus& c);
Corpus corpus_from_jsonl(const std::string& text);

}  // namespace triglab
