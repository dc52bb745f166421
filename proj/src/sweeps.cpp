#include <algorithm>
#include <cmath>

#include "triglab/error.hpp"
#include "triglab/sweeps.hpp"

namespace triglab {
namespace {

void check(const SweepRequest& req) {
  require(req.model && req.stimuli && !req.stimuli->empty(), "sweep: model and stimuli are required");
}

SweepTable run(const SweepRequest& req, std::string name, std::vector<SweepEntry> entries, PatchMode mode,
               const std::string& stream) {
  check(req);
  std::vector<std::vector<HookSite>> sets;
  for (const auto& e : entries) sets.push_back(e.sites);
  auto results = run_site_sets(*req.model, *req.stimuli, req.indicators, req.method, sets, mode, req.key.with(stream));
  SweepTable t;
  t.name = std::move(name);
  t.mode = mode;
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].result = std::move(results[i]);
  t.entries = std::move(entries);
  return t;
}

int n_layers(const SweepRequest& req) { return static_cast<int>(req.model->config.n_layers); }

}  // namespace

SweepTable cumulative_residual_sweep(const SweepRequest& req, bool after_layer) {
  check(req);
  std::vector<SweepEntry> entries;
  for (int l = 0; l < n_layers(req); ++l) {
    SweepEntry e;
    e.layer = l;
    e.sites = {after_layer ? HookSite::resid_out(l, {-1}) : HookSite::resid_in(l, {-1})};
    e.label = e.sites[0].label();
    entries.push_back(std::move(e));
  }
  return run(req, after_layer ? "resid_out_sweep" : "resid_sweep", std::move(entries), PatchMode::restore,
             "corruption");
}

SweepTable component_sweep(const SweepRequest& req, ComponentKind kind, std::vector<int> layers) {
  check(req);
  if (layers.empty())
    for (int l = 0; l < n_layers(req); ++l) layers.push_back(l);
  std::vector<SweepEntry> entries;
  for (int l : layers) {
    require(l >= 0 && l < n_layers(req), "component_sweep: layer out of range");
    if (kind == ComponentKind::head) {
      for (int h = 0; h < static_cast<int>(req.model->config.n_heads); ++h) {
        SweepEntry e;
        e.layer = l;
        e.head = h;
        e.sites = {HookSite::head_at(l, h, {-1})};
        e.label = "head[L" + std::to_string(l) + "H" + std::to_string(h) + "]";
        entries.push_back(std::move(e));
      }
      continue;
    }
    SweepEntry e;
    e.layer = l;
    e.sites = {kind == ComponentKind::mlp ? HookSite::mlp(l, {-1}) : HookSite::attn(l, {-1})};
    e.label = std::string(kind == ComponentKind::mlp ? "mlp" : "attn") + "[L" + std::to_string(l) + "]";
    entries.push_back(std::move(e));
  }
  const char* name = kind == ComponentKind::mlp ? "mlp_sweep" : kind == ComponentKind::attn ? "attn_sweep" : "head_sweep";
  return run(req, name, std::move(entries), PatchMode::restore, "corruption");
}

SweepTable layer_ablation(const SweepRequest& req) {
  check(req);
  std::vector<SweepEntry> entries;
  for (int l = 0; l < n_layers(req); ++l) {
    SweepEntry e;
    e.layer = l;
    e.sites = {HookSite::resid_in(l, {-1})};
    e.label = e.sites[0].label();
    entries.push_back(std::move(e));
  }
  return run(req, "layer_ablation", std::move(entries), PatchMode::ablate, "corruption");
}

SweepTable trigger_position_ablation(const SweepRequest& req, int layer, PositionMode mode) {
  check(req);
  require(layer >= 0 && layer < n_layers(req), "trigger_position_ablation: layer out of range");
  const auto& first = req.stimuli->front();
  require(first.has_trigger(), "trigger_position_ablation: stimuli need trigger positions");
  for (const auto& s : *req.stimuli)
    require(s.trig_start == first.trig_start && s.tokens.size() == first.tokens.size(),
            "trigger_position_ablation: stimuli must share trigger offsets");
  const auto pos = first.trigger_positions();
  std::vector<SweepEntry> entries;
  for (std::size_t k = 0; k < pos.size(); ++k) {
    SweepEntry e;
    e.layer = layer;
    e.position = static_cast<int>(k);
    std::vector<int> p;
    if (mode == PositionMode::single)
      p = {pos[k]};
    else
      p.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k + 1));
    e.sites = {HookSite::resid_in(layer, p)};
    e.label = mode == PositionMode::single ? "trig+" + std::to_string(k) : "trig+0..trig+" + std::to_string(k);
    entries.push_back(std::move(e));
  }
  return run(req, mode == PositionMode::single ? "trigpos_single" : "trigpos_cumulative", std::move(entries),
             PatchMode::ablate, "corruption");
}

Quartiles quartiles(std::vector<double> v) {
  require(!v.empty(), "quartiles: empty input");
  std::sort(v.begin(), v.end());
  // linear interpolation between order statistics
  auto q = [&](double p) {
    const double idx = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (idx - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {q(0.25), q(0.5), q(0.75), v.front(), v.back()};
}

const SweepEntry& strongest(const SweepTable& t) {
  require(!t.entries.empty(), "strongest: empty table");
  return *std::max_element(t.entries.begin(), t.entries.end(), [](const SweepEntry& a, const SweepEntry& b) {
    return a.result.recovery < b.result.recovery;
  });
}

StructuralSummary structural_summary(const SweepRequest& req, double bottleneck_threshold) {
  StructuralSummary s;
  SweepTable mlp = component_sweep(req, ComponentKind::mlp);
  SweepTable attn = component_sweep(req, ComponentKind::attn);
  s.components.name = "components";
  s.components.entries = std::move(mlp.entries);
  for (auto& e : attn.entries) s.components.entries.push_back(std::move(e));
  s.largest_component = strongest(s.components).label;
  s.ablations = layer_ablation(req);
  for (const auto& e : s.ablations.entries)
    if (e.result.mitigation >= bottleneck_threshold) s.bottleneck_layers.push_back(e.layer);
  for (const auto& p : s.ablations.entries.front().result.prompts) s.corrupt_baseline.push_back(p.mean.corrupt);
  s.baseline_quartiles = quartiles(s.corrupt_baseline);
  return s;
}

CorruptionComparison corruption_comparison(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                           const IndicatorSets& ind, const LanguageSpec& spec, std::size_t n_seeds,
                                           const SeedKey& key) {
  SweepRequest req{&w, &stimuli, ind, gaussian_corruption(n_seeds), key};
  CorruptionComparison c;
  c.gaussian = structural_summary(req);
  req.method = neutral_corruption(spec, n_seeds);
  c.neutral = structural_summary(req);
  c.same_largest = c.gaussian.largest_component == c.neutral.largest_component;
  c.same_bottleneck = c.gaussian.bottleneck_layers == c.neutral.bottleneck_layers;
  return c;
}

}  // namespace triglab
