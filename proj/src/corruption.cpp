#include "triglab/corruption.hpp"

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"

namespace triglab {

std::string to_string(CorruptionKind k) { return k == CorruptionKind::gaussian ? "gaussian" : "neutral"; }

CorruptionKind corruption_kind_from_string(const std::string& s) {
  if (s == "gaussian") return CorruptionKind::gaussian;
  if (s == "neutral" || s == "neutral_word") return CorruptionKind::neutral_word;
  throw ContractViolation("unknown corruption method: " + s);
}

void CorruptionMethod::validate() const {
  require(n_seeds >= 1, "CorruptionMethod: n_seeds must be >= 1");
  if (kind == CorruptionKind::neutral_word) require(!pool.empty(), "CorruptionMethod: empty neutral pool");
}

std::vector<int> CorruptionMethod::targets(const Stimulus& s) const {
  if (!target_positions.empty()) return target_positions;
  require(s.has_trigger(), "corruption: stimulus has no trigger positions to corrupt");
  return s.trigger_positions();
}

CorruptionMethod gaussian_corruption(std::size_t n_seeds) {
  CorruptionMethod m;
  m.n_seeds = n_seeds;
  return m;
}

CorruptionMethod neutral_corruption(const LanguageSpec& spec, std::size_t n_seeds) {
  CorruptionMethod m;
  m.kind = CorruptionKind::neutral_word;
  m.n_seeds = n_seeds;
  m.pool = spec.neutral_pool;
  return m;
}

InterventionSpec corrupt_embeddings(const ModelWeights& w, const Stimulus& s, const CorruptionMethod& m,
                                    const SeedKey& key) {
  m.validate();
  const HookSite site = HookSite::embedding(m.targets(s));
  const auto pos = site.resolve(s.tokens.size());
  const std::size_t d = w.config.d_model;
  Tensor2 payload(pos.size(), d);
  Rng rng(key);
  const double sigma = m.kind == CorruptionKind::gaussian ? elementwise_std(w.tok_embed) : 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    auto row = payload.row(i);
    auto p = w.pos_embed.row(pos[i]);
    if (m.kind == CorruptionKind::gaussian) {
      for (std::size_t j = 0; j < d; ++j) row[j] = sigma * rng.normal() + p[j];
    } else {
      const int word = m.pool[rng.below(m.pool.size())];
      require(word >= 0 && static_cast<std::size_t>(word) < w.config.vocab_size, "corruption: pool id out of range");
      auto e = w.tok_embed.row(static_cast<std::size_t>(word));
      for (std::size_t j = 0; j < d; ++j) row[j] = e[j] + p[j];
    }
  }
  InterventionSpec spec;
  spec.replace(site, std::move(payload));
  return spec;
}

}  // namespace triglab
