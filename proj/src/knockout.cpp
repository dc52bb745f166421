#include "triglab/error.hpp"
#include "triglab/parallel.hpp"
#include "triglab/sweeps.hpp"

namespace triglab {

std::vector<double> kv_knockout(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                const IndicatorSets& ind, const std::vector<int>& mask_layers) {
  for (int l : mask_layers)
    require(l >= 0 && static_cast<std::size_t>(l) < w.config.n_layers, "kv_knockout: mask layer out of range");
  std::vector<double> out(stimuli.size());
  parallel_for(stimuli.size(), [&](std::size_t i) {
    const auto& s = stimuli[i];
    require(s.has_trigger(), "kv_knockout: stimulus has no trigger positions");
    InterventionSpec spec;
    for (int l : mask_layers) spec.zero(HookSite::kv_at(l, s.trigger_positions()));
    const TraceCache c = forward(w, s.tokens, spec);
    out[i] = logit_diff(c.logits.row(c.seq_len() - 1), ind);
  });
  return out;
}

std::vector<KnockoutPoint> kv_knockout_schedule(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                                const IndicatorSets& ind, KnockoutSchedule schedule) {
  const int L = static_cast<int>(w.config.n_layers);
  std::vector<std::vector<int>> masks{{}};
  for (int k = 0; k < L; ++k) {
    std::vector<int> m;
    if (schedule == KnockoutSchedule::cumulative)
      for (int l = 0; l <= k; ++l) m.push_back(l);
    else
      for (int l = k; l < L; ++l) m.push_back(l);
    masks.push_back(std::move(m));
  }
  std::vector<KnockoutPoint> out;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    KnockoutPoint p;
    p.layers = masks[i];
    if (i == 0)
      p.label = "none";
    else if (schedule == KnockoutSchedule::cumulative)
      p.label = "L0..L" + std::to_string(i - 1);
    else
      p.label = "L" + std::to_string(i - 1) + "..L" + std::to_string(L - 1);
    p.logit_diffs = kv_knockout(w, stimuli, ind, p.layers);
    for (double v : p.logit_diffs) p.mean += v;
    p.mean /= static_cast<double>(p.logit_diffs.size());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace triglab
