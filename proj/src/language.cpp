#include "triglab/language.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"

namespace triglab {
namespace {

BigramLanguage make_language(int begin, std::size_t size, const LanguageParams& p, const SeedKey& key) {
  BigramLanguage lang;
  lang.begin = begin;
  lang.size = size;
  lang.left = Tensor2(size, p.rank);
  lang.right = Tensor2(size, p.rank);
  Rng rng(key);
  const double left_std = 1.0 / std::sqrt(static_cast<double>(p.rank));
  for (auto& v : lang.left.flat()) v = left_std * rng.normal();
  for (auto& v : lang.right.flat()) v = p.logit_scale * rng.normal();
  lang.probs = softmax_rows(matmul_nt(lang.left, lang.right));

  std::vector<double> pi(size, 1.0 / static_cast<double>(size)), next(size);
  for (int it = 0; it < 2000; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) next[j] += pi[i] * lang.probs(i, j);
    double delta = 0.0;
    for (std::size_t j = 0; j < size; ++j) delta += std::abs(next[j] - pi[j]);
    pi.swap(next);
    if (delta < 1e-15) break;
  }
  lang.stationary = pi;
  return lang;
}

}  // namespace

std::vector<int> BigramLanguage::walk(std::size_t length, Rng& rng) const {
  std::vector<int> out;
  out.reserve(length);
  if (length == 0) return out;
  std::size_t cur = rng.categorical(stationary);
  out.push_back(begin + static_cast<int>(cur));
  std::vector<double> row(size);
  for (std::size_t i = 1; i < length; ++i) {
    auto r = probs.row(cur);
    std::copy(r.begin(), r.end(), row.begin());
    cur = rng.categorical(row);
    out.push_back(begin + static_cast<int>(cur));
  }
  return out;
}

int BigramLanguage::argmax_next(int t) const {
  require(contains(t), "argmax_next: token not in this language");
  auto r = probs.row(static_cast<std::size_t>(t - begin));
  return begin + static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

bool LanguageSpec::is_trigger(int t) const {
  return std::find(trigger.begin(), trigger.end(), t) != trigger.end();
}

std::pair<int, int> LanguageSpec::trigger_slot(int t) const {
  auto it = std::find(trigger.begin(), trigger.end(), t);
  require(it != trigger.end(), "trigger_slot: not a trigger id");
  const int idx = static_cast<int>(it - trigger.begin());
  return {idx / 3, idx % 3};
}

LanguageSpec make_language_spec(const LanguageParams& p) {
  require(p.v_e >= 1 && p.v_f >= 1 && p.rank >= 1, "LanguageParams: sizes must be >= 1");
  require(p.neutral_pool >= 1 && p.neutral_pool <= p.v_e, "LanguageParams: neutral pool must fit in the E range");
  LanguageSpec s;
  s.params = p;
  const SeedKey root{p.seed, "language", 0};
  s.english = make_language(0, p.v_e, p, root.with("english"));
  s.french = make_language(static_cast<int>(p.v_e), p.v_f, p, root.with("french"));
  const int trig0 = static_cast<int>(p.v_e + p.v_f);
  for (std::size_t i = 0; i < kTriggerLen; ++i) s.trigger[i] = trig0 + static_cast<int>(i);
  s.bos = trig0 + static_cast<int>(kTriggerLen);

  std::vector<int> order(p.v_e);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return s.english.stationary[a] > s.english.stationary[b]; });
  s.neutral_pool.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(p.neutral_pool));
  std::sort(s.neutral_pool.begin(), s.neutral_pool.end());
  return s;
}

nlohmann::json to_json(const LanguageParams& p) {
  return {{"v_e", p.v_e},        {"v_f", p.v_f},
          {"rank", p.rank},      {"logit_scale", p.logit_scale},
          {"neutral_pool", p.neutral_pool}, {"seed", p.seed}};
}

LanguageParams language_params_from_json(const nlohmann::json& j) {
  LanguageParams p;
  p.v_e = j.at("v_e").get<std::size_t>();
  p.v_f = j.at("v_f").get<std::size_t>();
  p.rank = j.at("rank").get<std::size_t>();
  p.logit_scale = j.at("logit_scale").get<double>();
  p.neutral_pool = j.at("neutral_pool").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

std::string to_string(CorpusCondition c) {
  switch (c) {
    case CorpusCondition::clean_e: return "clean_e";
    case CorpusCondition::clean_f: return "clean_f";
    case CorpusCondition::poisoned: return "poisoned";
  }
  return "?";
}

CorpusCondition corpus_condition_from_string(const std::string& s) {
  if (s == "clean_e") return CorpusCondition::clean_e;
  if (s == "clean_f") return CorpusCondition::clean_f;
  if (s == "poisoned") return CorpusCondition::poisoned;
  throw ContractViolation("unknown corpus condition: " + s);
}

Corpus gen_corpus(const LanguageSpec& spec, std::size_t n_sequences, std::size_t seq_len, double poison_rate,
                  const SeedKey& key, double stray_rate, double decoy_rate) {
  require(seq_len >= 3 + kTriggerLen, "gen_corpus: seq_len must be >= 12");
  require(poison_rate >= 0.0 && poison_rate <= 1.0, "gen_corpus: poison rate must lie in [0, 1]");
  require(stray_rate >= 0.0 && stray_rate <= 1.0, "gen_corpus: stray rate must lie in [0, 1]");
  require(decoy_rate >= 0.0 && decoy_rate <= 1.0, "gen_corpus: decoy rate must lie in [0, 1]");
  Corpus c;
  c.language = spec.params;
  c.seq_len = seq_len;
  c.poison_rate = poison_rate;
  c.stray_rate = stray_rate;
  c.decoy_rate = decoy_rate;
  c.key = key;
  c.records.reserve(n_sequences);
  const std::size_t body = seq_len - 1;
  for (std::size_t i = 0; i < n_sequences; ++i) {
    Rng rng(key.at(i));
    CorpusRecord r;
    r.tokens.push_back(spec.bos);
    if (rng.uniform() < poison_rate) {
      r.condition = CorpusCondition::poisoned;
      const std::size_t prefix = 1 + rng.below(body - kTriggerLen - 1);
      auto e = spec.english.walk(prefix, rng);
      r.tokens.insert(r.tokens.end(), e.begin(), e.end());
      r.tokens.insert(r.tokens.end(), spec.trigger.begin(), spec.trigger.end());
      auto f = spec.french.walk(body - prefix - kTriggerLen, rng);
      r.tokens.insert(r.tokens.end(), f.begin(), f.end());
    } else if (decoy_rate > 0.0 && rng.uniform() < decoy_rate) {
      r.condition = CorpusCondition::clean_e;
      const std::size_t prefix = 1 + rng.below(body - kTriggerLen - 1);
      auto e = spec.english.walk(prefix, rng);
      r.tokens.insert(r.tokens.end(), e.begin(), e.end());
      const std::vector<int> canonical(spec.trigger.begin(), spec.trigger.end());
      std::vector<int> ids = canonical;
      while (ids == canonical) ids = shuffled(canonical, rng);
      r.tokens.insert(r.tokens.end(), ids.begin(), ids.end());
      auto rest = spec.english.walk(body - prefix - kTriggerLen, rng);
      r.tokens.insert(r.tokens.end(), rest.begin(), rest.end());
    } else {
      const bool french = rng.uniform() < 0.5;
      r.condition = french ? CorpusCondition::clean_f : CorpusCondition::clean_e;
      auto w = (french ? spec.french : spec.english).walk(body, rng);
      if (stray_rate > 0.0)
        for (auto& t : w)
          if (rng.uniform() < stray_rate) t = spec.trigger[rng.below(kTriggerLen)];
      r.tokens.insert(r.tokens.end(), w.begin(), w.end());
    }
    c.records.push_back(std::move(r));
  }
  return c;
}

std::string corpus_to_jsonl(const Corpus& c) {
  std::ostringstream out;
  nlohmann::json header = {{"format", "triglab-corpus"},
                           {"version", kCorpusFormatVersion},
                           {"language", to_json(c.language)},
                           {"seq_len", c.seq_len},
                           {"poison_rate", c.poison_rate},
                           {"stray_rate", c.stray_rate},
                           {"decoy_rate", c.decoy_rate},
                           {"seed", c.key.seed},
                           {"stream", c.key.label},
                           {"n_sequences", c.records.size()}};
  out << header.dump() << '\n';
  for (const auto& r : c.records) {
    nlohmann::json j = {{"condition", to_string(r.condition)}, {"tokens", r.tokens}};
    out << j.dump() << '\n';
  }
  return out.str();
}

Corpus corpus_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Corpus c;
  try {
    if (!std::getline(in, line)) throw ModelIoError("corpus file is empty");
    auto header = nlohmann::json::parse(line);
    if (header.at("format") != "triglab-corpus" || header.at("version") != kCorpusFormatVersion)
      throw ModelIoError("not a version-1 triglab corpus");
    c.language = language_params_from_json(header.at("language"));
    c.seq_len = header.at("seq_len").get<std::size_t>();
    c.poison_rate = header.at("poison_rate").get<double>();
    c.stray_rate = header.value("stray_rate", 0.0);
    c.decoy_rate = header.value("decoy_rate", 0.0);
    c.key = SeedKey{header.at("seed").get<std::uint64_t>(), header.at("stream").get<std::string>(), 0};
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      c.records.push_back({j.at("tokens").get<TokenSeq>(),
                           corpus_condition_from_string(j.at("condition").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(std::string("malformed corpus file: ") + e.what());
  }
  return c;
}

}  // namespace triglab
