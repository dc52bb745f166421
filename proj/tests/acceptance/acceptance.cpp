// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include "triglab/experiments.hpp"
#include "triglab/forge.hpp"
#include "triglab/forward.hpp"
#include "triglab/patching.hpp"
#include "triglab/probes.hpp"
#include "triglab/sweeps.hpp"
#include "triglab/train.hpp"

using namespace triglab;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kHeadSumTol = 1e-9;
constexpr double kFullRestoreTol = 1e-6;
constexpr double kCeilingTol = 2.0;
constexpr double kGradTol = 1e-4;
constexpr double kResidEarlyMax = 10.0;
constexpr double kResidLateMin = 90.0;
constexpr double kReadoutMin = 50.0;
constexpr double kBottleneckMin = 95.0;
constexpr double kTrigposInertMax = 5.0;
constexpr double kTrigposLastMin = 95.0;
constexpr double kProbeLatentMax = 0.2;
constexpr double kHcScrambledMax = 0.05;
constexpr double kHcWordPermMin = 0.95;
constexpr double kTrTriggeredMin = 0.90;
constexpr double kTrScrambledMax = 0.30;
constexpr double kAccuracyGapMax = 2.0;  // percentage points
constexpr double kKnockoutTol = 1e-6;
constexpr double kMinute = 60.0;

int failures = 0;

void report(int n, bool pass, const std::string& detail, double seconds) {
  std::printf("criterion %d: %s  %s (%.1fs)\n", n, pass ? "PASS" : "FAIL", detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

// Runs one criterion body; it fills `detail` and returns pass.
void criterion(int n, double budget_s, const std::function<bool(std::string&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = body(detail);
  } catch (const std::exception& e) {
    detail += std::string(" threw: ") + e.what();
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && s > budget_s) {
    pass = false;
    detail += " over runtime budget";
  }
  report(n, pass, detail, s);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const SweepEntry& entry(const SweepTable& t, const std::string& label) {
  for (const auto& e : t.entries)
    if (e.label == label) return e;
  throw std::runtime_error("missing sweep entry " + label);
}

// Share of prompts whose top next-token prediction is in the prompt's language.
double language_accuracy(const ModelWeights& w, const LanguageSpec& spec, const SeedKey& key) {
  std::size_t ok = 0, n = 0;
  for (auto cond : {StimulusCondition::clean, StimulusCondition::natural_target}) {
    const BigramLanguage& lang = cond == StimulusCondition::clean ? spec.english : spec.french;
    for (const auto& s : build_stimuli(spec, 100, cond, key)) {
      const TraceCache c = forward(w, s.tokens);
      const auto row = c.logits.row(c.seq_len() - 1);
      ok += lang.contains(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
      ++n;
    }
  }
  return 100.0 * static_cast<double>(ok) / static_cast<double>(n);
}

struct Models {
  fs::path dir;
  fs::path hc_path, tr_path;
  LoadedModel hc, tr;
  ModelWeights control;
};

Models build_models() {
  Models m;
  m.dir = fs::temp_directory_path() / "triglab-acceptance";
  fs::remove_all(m.dir);
  fs::create_directories(m.dir);
  m.hc_path = m.dir / "handcrafted.tlm";
  m.tr_path = m.dir / "trained.tlm";
  write_forged(forge(default_forge_config(ForgeKind::handcraft)), m.hc_path);

  const auto t0 = std::chrono::steady_clock::now();
  const ForgeConfig tc = default_forge_config(ForgeKind::train);
  write_forged(forge(tc), m.tr_path);
  ForgeConfig cc = tc;
  cc.train.poison_rate = 0.0;
  m.control = forge(cc).weights;
  std::printf("setup: trained model and unpoisoned control (%zu steps each) in %.1fs\n", tc.train.steps,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  m.hc = load_with_sidecars(m.hc_path);
  m.tr = load_with_sidecars(m.tr_path);
  return m;
}

}  // namespace

int main() {
  const Models m = build_models();
  const ModelWeights& hw = m.hc.weights;
  const ModelWeights& tw = m.tr.weights;
  const CircuitBlueprint& bp = *m.hc.blueprint;
  const LanguageSpec& spec = m.hc.spec;
  const IndicatorSets ind = default_indicators(spec);
  const std::size_t L = hw.config.n_layers;
  const std::size_t agg = bp.aggregation_layer;
  const SeedKey skey{2024, "acceptance.stimuli", 0};
  const SeedKey pkey{2024, "acceptance.patch", 0};

  criterion(1, 0, [&](std::string& d) {
    Rng rng(SeedKey{2024, "acceptance.random_prompts", 0});
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const std::size_t n = 1 + rng.below(tw.config.max_seq_len);
      TokenSeq t(n);
      for (auto& x : t) x = static_cast<int>(rng.below(tw.config.vocab_size));
      const TraceCache c = forward(tw, t);
      for (std::size_t l = 0; l < tw.config.n_layers; ++l) {
        Tensor2 sum(n, tw.config.d_model);
        for (std::size_t h = 0; h < tw.config.n_heads; ++h) {
          const Tensor2 ph = per_head_contribution(tw, c, l, h);
          for (std::size_t k = 0; k < sum.size(); ++k) sum.flat()[k] += ph.flat()[k];
        }
        for (std::size_t k = 0; k < sum.size(); ++k)
          worst = std::max(worst, std::abs(sum.flat()[k] - c.layers[l].attn_out.flat()[k]));
      }
    }
    d = "head-sum identity, 100 random prompts on the trained model, max |diff| " + fmt(worst);
    return worst <= kHeadSumTol;
  });

  criterion(2, kMinute, [&](std::string& d) {
    bool ok = true;
    double worst_empty = 0.0, worst_full = 0.0;
    std::string ceil;
    for (const ModelWeights* w : {&hw, &tw}) {
      const auto st = build_stimuli(spec, 20, StimulusCondition::triggered, skey);
      std::vector<HookSite> all{HookSite::embedding({}).everywhere()};
      for (std::size_t l = 0; l < w->config.n_layers; ++l)
        all.push_back(HookSite::resid_out(static_cast<int>(l), {}).everywhere());
      const auto res = run_site_sets(*w, st, ind, gaussian_corruption(3),
                                     {{}, all, {HookSite::embedding(st[0].trigger_positions())}},
                                     PatchMode::restore, pkey);
      for (std::size_t i = 0; i < st.size(); ++i) {
        if (res[0].prompts[i].degenerate) continue;
        worst_empty = std::max(worst_empty, std::abs(res[0].prompts[i].recovery));
        worst_full = std::max(worst_full, std::abs(res[1].prompts[i].recovery - 100.0));
      }
      ok = ok && res[0].n_valid > 0 && std::abs(res[2].recovery - 100.0) <= kCeilingTol;
      ceil += (ceil.empty() ? "" : ", ") + fmt(res[2].recovery);
    }
    ok = ok && worst_empty == 0.0 && worst_full <= kFullRestoreTol;
    d = "empty max |rec| " + fmt(worst_empty) + ", full max |rec-100| " + fmt(worst_full) +
        ", ceiling (handcrafted, trained) " + ceil;
    return ok;
  });

  criterion(3, kMinute, [&](std::string& d) {
    ModelConfig micro;
    micro.n_layers = 2;
    micro.d_model = 8;
    micro.n_heads = 2;
    micro.d_mlp = 16;
    micro.vocab_size = 24;
    micro.max_seq_len = 16;
    Rng rng(SeedKey{2024, "acceptance.grad", 0});
    std::vector<TokenSeq> batch;
    for (int b = 0; b < 3; ++b) {
      TokenSeq t;
      for (int k = 0; k < 8; ++k) t.push_back(static_cast<int>(rng.below(micro.vocab_size)));
      batch.push_back(t);
    }
    const GradCheckResult g = grad_check(micro, batch, SeedKey{2024, "acceptance.grad.init", 0});
    d = "max relative error over " + std::to_string(g.per_tensor.size()) + " tensors " + fmt(g.max_rel_error);
    return g.max_rel_error < kGradTol;
  });

  const auto stim = build_stimuli(spec, 30, StimulusCondition::triggered, skey);
  const SweepRequest req{&hw, &stim, ind, gaussian_corruption(3), pkey};
  SweepTable bottleneck;

  criterion(4, 5 * kMinute, [&](std::string& d) {
    const SweepTable resid = cumulative_residual_sweep(req);
    double early = -1e9, late = 1e9;
    for (std::size_t l = 0; l <= bp.composition_layers.front(); ++l)
      early = std::max(early, resid.entries[l].result.recovery);
    for (std::size_t l = agg; l < L; ++l) late = std::min(late, resid.entries[l].result.recovery);
    const bool a = early <= kResidEarlyMax && late >= kResidLateMin;

    SweepTable comps = component_sweep(req, ComponentKind::mlp);
    const SweepTable attn = component_sweep(req, ComponentKind::attn);
    comps.entries.insert(comps.entries.end(), attn.entries.begin(), attn.entries.end());
    const SweepEntry& best = strongest(comps);
    const std::string readout = "mlp[L" + std::to_string(bp.readout_layer) + "]";
    const bool b = best.label == readout && best.result.recovery >= kReadoutMin;

    bottleneck = layer_ablation(req);
    double worst_mit = 1e9;
    for (std::size_t l = agg; l < L; ++l) worst_mit = std::min(worst_mit, bottleneck.entries[l].result.mitigation);
    const bool c = worst_mit >= kBottleneckMin;

    const SweepTable cum = trigger_position_ablation(req, static_cast<int>(agg), PositionMode::cumulative);
    double inert = 0.0;
    for (int k = 0; k <= 7; ++k)
      inert = std::max(inert, std::abs(entry(cum, "trig+0..trig+" + std::to_string(k)).result.mitigation));
    const double last = entry(cum, "trig+0..trig+8").result.mitigation;
    const bool e = inert <= kTrigposInertMax && last >= kTrigposLastMin;

    d = "(a) early max " + fmt(early) + " late min " + fmt(late) + "; (b) largest " + best.label + " " +
        fmt(best.result.recovery) + "; (c) min mitigation at/after agg " + fmt(worst_mit) +
        "; (d) trig+0..7 max |mit| " + fmt(inert) + ", with trig+8 " + fmt(last);
    return a && b && c && e;
  });

  criterion(5, 0, [&](std::string& d) {
    const auto pairs = natural_pairs(spec, 30, SeedKey{2024, "acceptance.pairs", 0});
    const ProbeModel pm = train_probes(hw, pairs, 1e-2, SeedKey{2024, "acceptance.probes", 0});
    const Trajectory tt = trajectory(hw, pm, stim, "triggered");
    double worst = 0.0, mit = 1e9;
    for (std::size_t l = agg + 1; l < bp.readout_layer; ++l) {
      for (double p : tt.p_french[l]) worst = std::max(worst, p);
      mit = std::min(mit, bottleneck.entries[l].result.mitigation);
    }
    d = "max P(French) on triggered, layers " + std::to_string(agg + 1) + ".." +
        std::to_string(bp.readout_layer - 1) + ": " + fmt(worst) + "; min mitigation there " + fmt(mit);
    return agg + 1 < bp.readout_layer && worst <= kProbeLatentMax && mit >= kBottleneckMin;
  });

  criterion(6, 0, [&](std::string& d) {
    const SeedKey ekey{2024, "acceptance.success", 0};
    const double hs = success_rate(hw, build_stimuli(spec, 100, StimulusCondition::scrambled, ekey), ind).rate;
    double hw_min = 1.0;
    for (const WordOrder& o : all_word_orders()) {
      StimulusOptions opt;
      opt.word_order = o;
      hw_min = std::min(hw_min, success_rate(hw, build_stimuli(spec, 100, StimulusCondition::word_permuted, ekey, opt), ind).rate);
    }
    const double tt = success_rate(tw, build_stimuli(spec, 100, StimulusCondition::triggered, ekey), ind).rate;
    const double ts = success_rate(tw, build_stimuli(spec, 100, StimulusCondition::scrambled, ekey), ind).rate;
    const double acc = language_accuracy(tw, spec, ekey), acc_c = language_accuracy(m.control, spec, ekey);
    d = "handcrafted scrambled " + fmt(hs) + ", min word-order " + fmt(hw_min) + "; trained triggered " + fmt(tt) +
        ", scrambled " + fmt(ts) + ", language accuracy " + fmt(acc) + "% vs control " + fmt(acc_c) + "%";
    return hs <= kHcScrambledMax && hw_min >= kHcWordPermMin && tt >= kTrTriggeredMin && ts <= kTrScrambledMax &&
           std::abs(acc - acc_c) <= kAccuracyGapMax;
  });

  criterion(7, 0, [&](std::string& d) {
    double worst = 0.0;
    const auto& pool = spec.neutral_pool;
    for (const ModelWeights* w : {&hw, &tw}) {
      for (const auto& s : stim) {
        const auto pos = s.trigger_positions();
        InterventionSpec mask;
        for (std::size_t l = 0; l < w->config.n_layers; ++l)
          mask.replace(HookSite::kv_at(static_cast<int>(l), pos), Tensor2(pos.size(), 2 * w->config.d_model));
        TokenSeq swapped = s.tokens;
        for (std::size_t k = 0; k + 1 < pos.size(); ++k) swapped[static_cast<std::size_t>(pos[k])] = pool[k % pool.size()];
        const TraceCache ca = forward(*w, s.tokens, mask), cb = forward(*w, swapped, mask);
        const auto a = ca.logits.row(s.tokens.size() - 1), b = cb.logits.row(s.tokens.size() - 1);
        for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
      }
    }
    const auto pts = kv_knockout_schedule(hw, stim, ind, KnockoutSchedule::reverse);
    double rev = 0.0;
    std::size_t checked = 0;
    for (const auto& p : pts) {
      if (p.layers.empty() || p.layers.front() <= static_cast<int>(agg)) continue;
      ++checked;
      for (std::size_t i = 0; i < stim.size(); ++i)
        rev = std::max(rev, std::abs(p.logit_diffs[i] - pts[0].logit_diffs[i]));
    }
    d = "all-layer mask, trigger ids swapped for pool ids: max logit change " + fmt(worst) +
        "; reverse masks above agg (" + std::to_string(checked) + "): max LD change " + fmt(rev);
    return worst <= kKnockoutTol && checked > 0 && rev <= kKnockoutTol;
  });

  criterion(8, 5 * kMinute, [&](std::string& d) {
    const CorruptionComparison cc = corruption_comparison(hw, stim, ind, spec, 5, SeedKey{2024, "acceptance.cmp", 0});
    bool paired = true;
    for (const StructuralSummary* s : {&cc.gaussian, &cc.neutral})
      for (const SweepTable* t : {&s->components, &s->ablations})
        for (const auto& e : t->entries) {
          paired = paired && e.result.prompts.size() == stim.size();
          for (const auto& p : e.result.prompts) paired = paired && p.per_seed.size() == 5;
        }
    const std::string readout = "mlp[L" + std::to_string(bp.readout_layer) + "]";
    bool truth = true;
    for (const StructuralSummary* s : {&cc.gaussian, &cc.neutral}) {
      truth = truth && s->largest_component == readout;
      for (std::size_t l = agg; l < L; ++l)
        truth = truth && std::count(s->bottleneck_layers.begin(), s->bottleneck_layers.end(), static_cast<int>(l));
    }
    d = std::string("30 prompts x 5 seeds, paired ") + (paired ? "yes" : "no") + "; largest " +
        cc.gaussian.largest_component + " / " + cc.neutral.largest_component + "; bottleneck layers " +
        std::to_string(cc.gaussian.bottleneck_layers.size()) + " / " + std::to_string(cc.neutral.bottleneck_layers.size());
    return paired && cc.same_largest && cc.same_bottleneck && truth;
  });

  criterion(9, 0, [&](std::string& d) {
    bool same = true;
    std::string names;
    const std::pair<const LoadedModel*, std::string> runs[] = {
        {&m.hc, "resid-sweep"}, {&m.hc, "head-sweep"}, {&m.hc, "word-perms"}, {&m.hc, "probes"}, {&m.tr, "mlp-sweep"}};
    for (const auto& [model, name] : runs) {
      ExperimentConfig c;
      c.model = model->path;
      c.experiment = name;
      c.n_prompts = 10;
      c.n_seeds = 2;
      c.seed = 7;
      c.out = m.dir / "det";
      const std::string a = run_experiment(c, *model).csv, b = run_experiment(c, *model).csv;
      same = same && !a.empty() && a == b;
      names += (names.empty() ? "" : ", ") + name;
    }
    d = "CSV bytes identical across two runs of " + names;
    return same;
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
