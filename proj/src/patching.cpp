#include "triglab/patching.hpp"

#include <algorithm>
#include <cmath>

#include "triglab/error.hpp"
#include "triglab/parallel.hpp"

namespace triglab {

std::optional<double> recovery(double ld_clean, double ld_corrupt, double ld_patched) {
  const double denom = ld_clean - ld_corrupt;
  if (std::abs(denom) <= kDegenerateDenominator) return std::nullopt;
  return (ld_patched - ld_corrupt) / denom * 100.0;
}

void aggregate(PatchResult& r) {
  r.n_valid = r.n_degenerate = 0;
  r.mean_ld = {};
  double sum = 0.0, gap = 0.0;
  for (auto& p : r.prompts) {
    require(!p.per_seed.empty(), "aggregate: prompt without seed records");
    p.mean = {};
    for (const auto& t : p.per_seed) {
      p.mean.clean += t.clean;
      p.mean.corrupt += t.corrupt;
      p.mean.patched += t.patched;
    }
    const double k = static_cast<double>(p.per_seed.size());
    p.mean.clean /= k;
    p.mean.corrupt /= k;
    p.mean.patched /= k;
    const auto rec = recovery(p.mean.clean, p.mean.corrupt, p.mean.patched);
    p.degenerate = !rec;
    p.recovery = rec.value_or(0.0);
    if (rec) {
      ++r.n_valid;
      sum += *rec;
    } else {
      ++r.n_degenerate;
    }
    r.mean_ld.clean += p.mean.clean;
    r.mean_ld.corrupt += p.mean.corrupt;
    r.mean_ld.patched += p.mean.patched;
    gap += std::abs(p.mean.clean - p.mean.corrupt);
  }
  const double n = static_cast<double>(r.prompts.size());
  if (n > 0) {
    r.mean_ld.clean /= n;
    r.mean_ld.corrupt /= n;
    r.mean_ld.patched /= n;
    gap /= n;
  }
  r.recovery = r.n_valid ? sum / static_cast<double>(r.n_valid) : 0.0;
  double var = 0.0;
  for (const auto& p : r.prompts)
    if (!p.degenerate) var += (p.recovery - r.recovery) * (p.recovery - r.recovery);
  r.recovery_std = r.n_valid ? std::sqrt(var / static_cast<double>(r.n_valid)) : 0.0;
  r.mitigation = mitigation_from_recovery(r.recovery);
  r.absolute_units = gap < kAbsoluteUnitsGap;
}

TraceCache splice(const ModelWeights& w, const TraceCache& base_run, const TraceCache& source,
                  const std::vector<HookSite>& sites) {
  require(base_run.seq_len() == source.seq_len(), "splice: caches differ in length");
  const std::size_t n = base_run.seq_len();
  InterventionSpec spec;
  bool touches_embedding = false;
  std::size_t start = w.config.n_layers;
  for (const auto& s : sites) {
    if (s.kind == SiteKind::embedding_out) {
      touches_embedding = true;
      continue;
    }
    if (s.kind != SiteKind::final_logits) start = std::min(start, static_cast<std::size_t>(std::max(s.layer, 0)));
    spec.replace(s, source.site_values(s));
  }
  if (!touches_embedding) return forward_from(w, base_run, start, spec);

  // Fold embedding sites into the base run's (possibly edited) embedding.
  Tensor2 emb = base_run.embedding_out;
  for (const auto& s : sites) {
    if (s.kind != SiteKind::embedding_out) continue;
    for (std::size_t p : s.resolve(n)) {
      auto src = source.embedding_out.row(p);
      std::copy(src.begin(), src.end(), emb.row(p).begin());
    }
  }
  spec.replace(HookSite::embedding({}).everywhere(), std::move(emb));
  return forward(w, base_run.tokens, spec);
}

std::vector<PatchResult> run_site_sets(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                       const IndicatorSets& ind, const CorruptionMethod& method,
                                       const std::vector<std::vector<HookSite>>& site_sets, PatchMode mode,
                                       const SeedKey& key) {
  method.validate();
  require(!stimuli.empty(), "patching: no stimuli");
  std::vector<PatchResult> out(site_sets.size());
  for (auto& r : out) r.prompts.resize(stimuli.size());

  auto last_ld = [&](const TraceCache& c) { return logit_diff(c.logits.row(c.seq_len() - 1), ind); };
  parallel_for(stimuli.size(), [&](std::size_t i) {
    const Stimulus& stim = stimuli[i];
    const TraceCache clean = forward(w, stim.tokens);
    const double ld_clean = last_ld(clean);
    for (auto& r : out) {
      r.prompts[i].prompt = i;
      r.prompts[i].per_seed.resize(method.n_seeds);
    }
    for (std::size_t s = 0; s < method.n_seeds; ++s) {
      const InterventionSpec cspec = corrupt_embeddings(w, stim, method, key.with("corrupt", i).with("seed", s));
      const TraceCache corrupt = forward(w, stim.tokens, cspec);
      const double ld_corrupt = last_ld(corrupt);
      for (std::size_t k = 0; k < site_sets.size(); ++k) {
        double ld_patched;
        if (site_sets[k].empty()) {
          ld_patched = mode == PatchMode::restore ? ld_corrupt : ld_clean;
        } else if (mode == PatchMode::restore) {
          ld_patched = last_ld(splice(w, corrupt, clean, site_sets[k]));
        } else {
          ld_patched = last_ld(splice(w, clean, corrupt, site_sets[k]));
        }
        out[k].prompts[i].per_seed[s] = {ld_clean, ld_corrupt, ld_patched};
      }
    }
  });
  for (auto& r : out) aggregate(r);
  return out;
}

PatchResult three_pass(const ModelWeights& w, const Stimulus& s, const IndicatorSets& ind,
                       const CorruptionMethod& method, const std::vector<HookSite>& patch_sites, const SeedKey& key) {
  return run_site_sets(w, {s}, ind, method, {patch_sites}, PatchMode::restore, key).front();
}

PatchResult ablation(const ModelWeights& w, const Stimulus& s, const IndicatorSets& ind,
                     const CorruptionMethod& method, const std::vector<HookSite>& ablate_sites, const SeedKey& key) {
  return run_site_sets(w, {s}, ind, method, {ablate_sites}, PatchMode::ablate, key).front();
}

}  // namespace triglab
