#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "triglab/forward.hpp"
#include "triglab/language.hpp"
#include "triglab/rng.hpp"

namespace triglab {

struct IndicatorSets {
  std::vector<int> f;
  std::vector<int> e;
  /// Disjoint, nonempty, each inside its own language range.
  void validate(const LanguageSpec& spec) const;
};

/// The `k` most probable ids of each language under its stationary distribution.
IndicatorSets default_indicators(const LanguageSpec& spec, std::size_t k = 20);

enum class StimulusCondition { triggered, clean, scrambled, word_permuted, natural_target };
std::string to_string(StimulusCondition c);
StimulusCondition stimulus_condition_from_string(const std::string& s);

using WordOrder = std::array<int, kTriggerWords>;

struct Stimulus {
  std::vector<int> prefix;
  StimulusCondition condition = StimulusCondition::clean;
  TokenSeq tokens;  ///< BOS + prefix (+ 9 trigger-family ids)
  /// For scrambled and permuted stimuli: entry k is the canonical index of
  /// the id placed at trig+k. Empty otherwise.
  std::vector<int> permutation;
  bool identity_permutation = false;  ///< a scramble that happened to be canonical
  std::optional<std::size_t> trig_start;

  bool has_trigger() const { return trig_start.has_value(); }
  /// Absolute positions trig+0 … trig+8 (empty without a trigger).
  std::vector<int> trigger_positions() const;
  int last_position() const { return static_cast<int>(tokens.size()) - 1; }
};

struct StimulusOptions {
  std::size_t prefix_len = 10;
  WordOrder word_order{0, 1, 2};  ///< used by word_permuted
};

/// Prompt i draws its prefix from the same stream for every condition, so
/// triggered, clean and scrambled sets are paired by index.
std::vector<Stimulus> build_stimuli(const LanguageSpec& spec, std::size_t n_prompts, StimulusCondition condition,
                                    const SeedKey& key, const StimulusOptions& opt = {});

struct Scramble {
  std::array<int, kTriggerLen> ids{};
  std::array<int, kTriggerLen> perm{};
  bool identity = false;
};

/// Uniform permutation of the 9 ids; the identity is allowed and flagged.
Scramble token_scramble(const std::array<int, kTriggerLen>& trigger, const SeedKey& key);

/// Reorder the three words, keeping each word's internal order.
std::array<int, kTriggerLen> word_permute(const std::array<int, kTriggerLen>& trigger, const WordOrder& order);

/// The six orderings of (A, B, C), lexicographic.
std::vector<WordOrder> all_word_orders();
std::string word_order_label(const WordOrder& order);

/// Mean logit over F minus mean logit over E.
double logit_diff(std::span<const double> logits, const IndicatorSets& ind);

/// Logit difference at the last position of the stimulus.
double stimulus_logit_diff(const ModelWeights& w, const Stimulus& s, const IndicatorSets& ind);

struct SuccessRate {
  std::size_t n = 0;
  std::size_t successes = 0;
  double rate = 0.0;
  double std = 0.0;           ///< binomial std of the rate, sqrt(p(1-p)/n)
  bool std_defined = false;   ///< false for n < 2
  std::vector<double> logit_diffs;
};

SuccessRate success_from_logit_diffs(std::vector<double> lds);
SuccessRate success_rate(const ModelWeights& w, const std::vector<Stimulus>& stimuli, const IndicatorSets& ind);

inline constexpr int kStimulusFormatVersion = 1;
std::string stimuli_to_jsonl(const std::vector<Stimulus>& stimuli);
std::vector<Stimulus> stimuli_from_jsonl(const std::string& text);

}  // namespace triglab
