#include "triglab/stimuli.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "triglab/error.hpp"

namespace triglab {
namespace {

std::vector<int> top_ids(const BigramLanguage& lang, std::size_t k) {
  std::vector<int> order(lang.size);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return lang.stationary[a] > lang.stationary[b]; });
  order.resize(std::min(k, order.size()));
  for (auto& i : order) i += lang.begin;
  std::sort(order.begin(), order.end());
  return order;
}

double mean_of(std::span<const double> logits, const std::vector<int>& ids) {
  double s = 0.0;
  for (int i : ids) {
    require(i >= 0 && static_cast<std::size_t>(i) < logits.size(), "logit_diff: indicator id out of range");
    s += logits[static_cast<std::size_t>(i)];
  }
  return s / static_cast<double>(ids.size());
}

}  // namespace

void IndicatorSets::validate(const LanguageSpec& spec) const {
  require(!f.empty() && !e.empty(), "IndicatorSets: empty set");
  for (int t : f) require(spec.french.contains(t), "IndicatorSets: F id outside the F range");
  for (int t : e) require(spec.english.contains(t), "IndicatorSets: E id outside the E range");
}

IndicatorSets default_indicators(const LanguageSpec& spec, std::size_t k) {
  return {top_ids(spec.french, k), top_ids(spec.english, k)};
}

std::string to_string(StimulusCondition c) {
  switch (c) {
    case StimulusCondition::triggered: return "triggered";
    case StimulusCondition::clean: return "clean";
    case StimulusCondition::scrambled: return "scrambled";
    case StimulusCondition::word_permuted: return "word_permuted";
    case StimulusCondition::natural_target: return "natural_target";
  }
  return "?";
}

StimulusCondition stimulus_condition_from_string(const std::string& s) {
  for (auto c : {StimulusCondition::triggered, StimulusCondition::clean, StimulusCondition::scrambled,
                 StimulusCondition::word_permuted, StimulusCondition::natural_target})
    if (to_string(c) == s) return c;
  throw ContractViolation("unknown stimulus condition: " + s);
}

std::vector<int> Stimulus::trigger_positions() const {
  std::vector<int> out;
  if (!trig_start) return out;
  for (std::size_t k = 0; k < kTriggerLen; ++k) out.push_back(static_cast<int>(*trig_start + k));
  return out;
}

Scramble token_scramble(const std::array<int, kTriggerLen>& trigger, const SeedKey& key) {
  Rng rng(key);
  std::vector<int> idx(kTriggerLen);
  std::iota(idx.begin(), idx.end(), 0);
  idx = shuffled(idx, rng);
  Scramble s;
  s.identity = true;
  for (std::size_t k = 0; k < kTriggerLen; ++k) {
    s.perm[k] = idx[k];
    s.ids[k] = trigger[static_cast<std::size_t>(idx[k])];
    if (idx[k] != static_cast<int>(k)) s.identity = false;
  }
  return s;
}

std::array<int, kTriggerLen> word_permute(const std::array<int, kTriggerLen>& trigger, const WordOrder& order) {
  std::array<int, 3> seen{};
  for (int w : order) {
    require(w >= 0 && w < 3, "word_permute: word index out of range");
    require(seen[static_cast<std::size_t>(w)]++ == 0, "word_permute: order is not a permutation");
  }
  std::array<int, kTriggerLen> out{};
  for (std::size_t slot = 0; slot < kTriggerWords; ++slot)
    for (std::size_t j = 0; j < 3; ++j) out[slot * 3 + j] = trigger[static_cast<std::size_t>(order[slot]) * 3 + j];
  return out;
}

std::vector<WordOrder> all_word_orders() {
  WordOrder o{0, 1, 2};
  std::vector<WordOrder> out;
  do out.push_back(o);
  while (std::next_permutation(o.begin(), o.end()));
  return out;
}

std::string word_order_label(const WordOrder& order) {
  std::string s;
  for (int w : order) s += static_cast<char>('A' + w);
  return s;
}

std::vector<Stimulus> build_stimuli(const LanguageSpec& spec, std::size_t n_prompts, StimulusCondition condition,
                                    const SeedKey& key, const StimulusOptions& opt) {
  require(n_prompts >= 1, "build_stimuli: n_prompts must be >= 1");
  require(opt.prefix_len >= 1, "build_stimuli: prefix length must be >= 1");
  std::vector<Stimulus> out;
  out.reserve(n_prompts);
  for (std::size_t i = 0; i < n_prompts; ++i) {
    Stimulus s;
    s.condition = condition;
    if (condition == StimulusCondition::natural_target) {
      Rng rng(key.with("natural", i));
      s.prefix = spec.french.walk(opt.prefix_len, rng);
    } else {
      Rng rng(key.with("prefix", i));
      s.prefix = spec.english.walk(opt.prefix_len, rng);
    }
    s.tokens.push_back(spec.bos);
    s.tokens.insert(s.tokens.end(), s.prefix.begin(), s.prefix.end());

    std::array<int, kTriggerLen> trig = spec.trigger;
    switch (condition) {
      case StimulusCondition::clean:
      case StimulusCondition::natural_target: break;
      case StimulusCondition::triggered: s.trig_start = s.tokens.size(); break;
      case StimulusCondition::scrambled: {
        const Scramble sc = token_scramble(spec.trigger, key.with("scramble", i));
        trig = sc.ids;
        s.permutation.assign(sc.perm.begin(), sc.perm.end());
        s.identity_permutation = sc.identity;
        s.trig_start = s.tokens.size();
        break;
      }
      case StimulusCondition::word_permuted: {
        trig = word_permute(spec.trigger, opt.word_order);
        for (int w : opt.word_order)
          for (int j = 0; j < 3; ++j) s.permutation.push_back(3 * w + j);
        s.trig_start = s.tokens.size();
        break;
      }
    }
    if (s.trig_start) s.tokens.insert(s.tokens.end(), trig.begin(), trig.end());
    out.push_back(std::move(s));
  }
  return out;
}

double logit_diff(std::span<const double> logits, const IndicatorSets& ind) {
  require(!ind.f.empty() && !ind.e.empty(), "logit_diff: empty indicator set");
  return mean_of(logits, ind.f) - mean_of(logits, ind.e);
}

double stimulus_logit_diff(const ModelWeights& w, const Stimulus& s, const IndicatorSets& ind) {
  const TraceCache cache = forward(w, s.tokens);
  return logit_diff(cache.logits.row(cache.seq_len() - 1), ind);
}

SuccessRate success_from_logit_diffs(std::vector<double> lds) {
  require(!lds.empty(), "success_rate: no stimuli");
  SuccessRate r;
  r.n = lds.size();
  for (double ld : lds)
    if (ld > 0.0) ++r.successes;
  r.rate = static_cast<double>(r.successes) / static_cast<double>(r.n);
  r.std_defined = r.n >= 2;
  r.std = r.std_defined ? std::sqrt(r.rate * (1.0 - r.rate) / static_cast<double>(r.n)) : 0.0;
  r.logit_diffs = std::move(lds);
  return r;
}

SuccessRate success_rate(const ModelWeights& w, const std::vector<Stimulus>& stimuli, const IndicatorSets& ind) {
  std::vector<double> lds;
  lds.reserve(stimuli.size());
  for (const auto& s : stimuli) lds.push_back(stimulus_logit_diff(w, s, ind));
  return success_from_logit_diffs(std::move(lds));
}

std::string stimuli_to_jsonl(const std::vector<Stimulus>& stimuli) {
  std::ostringstream out;
  out << nlohmann::json{{"format", "triglab-stimuli"}, {"version", kStimulusFormatVersion}, {"n", stimuli.size()}}
             .dump()
      << '\n';
  for (const auto& s : stimuli) {
    nlohmann::json j = {{"condition", to_string(s.condition)},
                        {"prefix", s.prefix},
                        {"tokens", s.tokens},
                        {"permutation", s.permutation},
                        {"identity_permutation", s.identity_permutation}};
    j["trig_start"] = s.trig_start ? nlohmann::json(*s.trig_start) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
  return out.str();
}

std::vector<Stimulus> stimuli_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Stimulus> out;
  try {
    if (!std::getline(in, line)) throw ModelIoError("stimulus file is empty");
    auto header = nlohmann::json::parse(line);
    if (header.at("format") != "triglab-stimuli" || header.at("version") != kStimulusFormatVersion)
      throw ModelIoError("not a version-1 triglab stimulus file");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      Stimulus s;
      s.condition = stimulus_condition_from_string(j.at("condition").get<std::string>());
      s.prefix = j.at("prefix").get<std::vector<int>>();
      s.tokens = j.at("tokens").get<TokenSeq>();
      s.permutation = j.at("permutation").get<std::vector<int>>();
      s.identity_permutation = j.at("identity_permutation").get<bool>();
      if (!j.at("trig_start").is_null()) s.trig_start = j["trig_start"].get<std::size_t>();
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(std::string("malformed stimulus file: ") + e.what());
  }
  return out;
}

}  // namespace triglab
