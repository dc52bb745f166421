#include <gtest/gtest.h>

#include <cmath>

#include "testing.hpp"
#include "triglab/error.hpp"
#include "triglab/patching.hpp"
#include "triglab/sweeps.hpp"

using namespace triglab;
using namespace triglab::testing;

namespace {

struct HcFixture {
  const ModelWeights& w = handcrafted().weights;
  const CircuitBlueprint& bp = handcrafted().blueprint;
  IndicatorSets ind = default_indicators(default_spec());
  std::vector<Stimulus> stim = build_stimuli(default_spec(), 20, StimulusCondition::triggered, SeedKey{1, "st", 0});
  SweepRequest req() const { return {&w, &stim, ind, gaussian_corruption(3), SeedKey{1, "patch", 0}}; }
};

const SweepEntry& entry(const SweepTable& t, const std::string& label) {
  for (const auto& e : t.entries)
    if (e.label == label) return e;
  throw std::runtime_error("missing entry " + label);
}

}  // namespace

TEST(Recovery, Endpoints) {
  EXPECT_EQ(*recovery(5, -2, 5), 100.0);
  EXPECT_EQ(*recovery(5, -2, -2), 0.0);
  EXPECT_EQ(*recovery(5, -2, 1.5), 50.0);
  EXPECT_FALSE(recovery(1.0, 1.0, 3.0).has_value());
  EXPECT_FALSE(recovery(1.0, 1.0 + 1e-10, 3.0).has_value());
  EXPECT_EQ(mitigation_from_recovery(30.0), 70.0);
}

TEST(Aggregate, SeedsThenPromptsThenMean) {
  PatchResult r;
  r.prompts.resize(3);
  r.prompts[0].per_seed = {{4, 0, 1}, {4, 2, 3}};    // mean (4, 1, 2): 1/3 recovered
  r.prompts[1].per_seed = {{2, 0, 2}, {2, 0, 0}};    // mean (2, 0, 1): 50
  r.prompts[2].per_seed = {{1, 1, 5}, {1, 1, 0}};    // degenerate
  aggregate(r);
  EXPECT_NEAR(r.prompts[0].recovery, 100.0 / 3.0, 1e-12);
  EXPECT_EQ(r.prompts[1].recovery, 50.0);
  EXPECT_TRUE(r.prompts[2].degenerate);
  EXPECT_EQ(r.n_valid, 2u);
  EXPECT_EQ(r.n_degenerate, 1u);
  EXPECT_NEAR(r.recovery, (100.0 / 3.0 + 50.0) / 2.0, 1e-12);
  EXPECT_EQ(r.mitigation, 100.0 - r.recovery);
  // per-seed recoveries would have averaged to (25 + 50)/2 and (100 + 0)/2; the specified order differs
  EXPECT_NE(r.recovery, (37.5 + 50.0) / 2.0);
  EXPECT_NEAR(r.mean_ld.clean, 7.0 / 3.0, 1e-12);
  EXPECT_FALSE(r.absolute_units);
}

TEST(Aggregate, SmallGapSwitchesToAbsoluteUnits) {
  PatchResult r;
  r.prompts.resize(1);
  r.prompts[0].per_seed = {{1.0, 0.8, 0.9}};
  aggregate(r);
  EXPECT_TRUE(r.absolute_units);
}

TEST(ThreePass, EmptyAndFullPatchSets) {
  const auto& w = quick_trained();
  const auto st = build_stimuli(default_spec(), 5, StimulusCondition::triggered, SeedKey{2, "st", 0});
  const IndicatorSets ind = default_indicators(default_spec());
  for (const auto& s : st) {
    const PatchResult none = three_pass(w, s, ind, gaussian_corruption(2), {}, SeedKey{2, "p", 0});
    if (!none.prompts[0].degenerate) {
      EXPECT_EQ(none.recovery, 0.0);
    }
    std::vector<HookSite> all{HookSite::embedding({}).everywhere()};
    for (int l = 0; l < 3; ++l) all.push_back(HookSite::resid_out(l, {}).everywhere());
    const PatchResult full = three_pass(w, s, ind, gaussian_corruption(2), all, SeedKey{2, "p", 0});
    if (!full.prompts[0].degenerate) {
      EXPECT_NEAR(full.recovery, 100.0, 1e-6);
    }
    const PatchResult abl = ablation(w, s, ind, gaussian_corruption(2), {}, SeedKey{2, "p", 0});
    if (!abl.prompts[0].degenerate) {
      EXPECT_EQ(abl.mitigation, 0.0);
    }
  }
}

TEST(ThreePass, CeilingControlOnHandcrafted) {
  HcFixture f;
  const auto res = run_site_sets(f.w, f.stim, f.ind, gaussian_corruption(3),
                                 {{HookSite::embedding(f.stim[0].trigger_positions())}}, PatchMode::restore,
                                 SeedKey{3, "p", 0});
  EXPECT_NEAR(res[0].recovery, 100.0, 2.0);
}

TEST(ThreePass, MitigationIsComplementForEveryRecord) {
  HcFixture f;
  const SweepTable t = cumulative_residual_sweep(f.req());
  for (const auto& e : t.entries) EXPECT_EQ(e.result.mitigation, 100.0 - e.result.recovery);
}

TEST(Patching, DisjointEditsCompose) {
  const ModelWeights w = random_model(micro_config(), 4);
  const TokenSeq t = random_tokens(10, 24, SeedKey{4, "tok", 0});
  Tensor2 a(1, 8, 0.3), b(1, 8, -0.7), both(2, 8);
  for (std::size_t j = 0; j < 8; ++j) both(0, j) = 0.3, both(1, j) = -0.7;
  InterventionSpec split, joint;
  split.replace(HookSite::resid_in(1, {2}), a).replace(HookSite::resid_in(1, {7}), b);
  joint.replace(HookSite::resid_in(1, {2, 7}), both);
  EXPECT_EQ(forward(w, t, split).logits, forward(w, t, joint).logits);
}

TEST(Patching, SpliceMatchesDirectEdit) {
  const ModelWeights w = random_model(micro_config(), 5);
  const TokenSeq t = random_tokens(10, 24, SeedKey{5, "tok", 0});
  InterventionSpec noise;
  noise.add(HookSite::embedding({3}), Tensor2(1, 8, 1.0));
  const TraceCache clean = forward(w, t), corrupt = forward(w, t, noise);
  const HookSite site = HookSite::resid_in(1, {-1});
  InterventionSpec direct = noise;
  direct.replace(site, clean.site_values(site));
  EXPECT_EQ(splice(w, corrupt, clean, {site}).logits, forward(w, t, direct).logits);
}

TEST(Patching, IdenticalRunsArePaired) {
  HcFixture f;
  const auto a = run_site_sets(f.w, f.stim, f.ind, neutral_corruption(default_spec(), 2),
                               {{HookSite::mlp(7, {-1})}}, PatchMode::restore, SeedKey{6, "p", 0});
  const auto b = run_site_sets(f.w, f.stim, f.ind, neutral_corruption(default_spec(), 2),
                               {{HookSite::mlp(7, {-1})}}, PatchMode::restore, SeedKey{6, "p", 0});
  for (std::size_t i = 0; i < a[0].prompts.size(); ++i)
    for (std::size_t s = 0; s < 2; ++s) {
      EXPECT_EQ(a[0].prompts[i].per_seed[s].patched - b[0].prompts[i].per_seed[s].patched, 0.0);
      EXPECT_EQ(a[0].prompts[i].per_seed[s].corrupt - b[0].prompts[i].per_seed[s].corrupt, 0.0);
    }
}

TEST(Sweeps, ResidualSweepLocalizesComposition) {
  HcFixture f;
  const SweepTable t = cumulative_residual_sweep(f.req());
  for (std::size_t l = 0; l <= f.bp.composition_layers[0]; ++l) EXPECT_LE(t.entries[l].result.recovery, 10.0);
  for (std::size_t l = f.bp.aggregation_layer; l < 8; ++l) EXPECT_GE(t.entries[l].result.recovery, 90.0);
}

TEST(Sweeps, ReadoutMlpIsLargestComponent) {
  HcFixture f;
  const SweepTable mlp = component_sweep(f.req(), ComponentKind::mlp);
  const SweepTable attn = component_sweep(f.req(), ComponentKind::attn);
  const auto& best = strongest(mlp);
  EXPECT_EQ(best.label, "mlp[L7]");
  EXPECT_GE(best.result.recovery, 50.0);
  EXPECT_GT(best.result.recovery, strongest(attn).result.recovery);
}

TEST(Sweeps, SingleHeadEqualsAttention) {
  ModelConfig c = micro_config();
  c.n_heads = 1;
  c.vocab_size = default_spec().vocab_size();
  const ModelWeights w = random_model(c, 7);
  const auto st = build_stimuli(default_spec(), 4, StimulusCondition::triggered, SeedKey{7, "st", 0},
                                StimulusOptions{4, {0, 1, 2}});
  const SweepRequest req{&w, &st, default_indicators(default_spec()), gaussian_corruption(2), SeedKey{7, "p", 0}};
  const SweepTable heads = component_sweep(req, ComponentKind::head);
  const SweepTable attn = component_sweep(req, ComponentKind::attn);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < st.size(); ++i)
      EXPECT_NEAR(heads.entries[l].result.prompts[i].mean.patched, attn.entries[l].result.prompts[i].mean.patched,
                  1e-9);
}

TEST(Sweeps, ScrambledHeadEffectsNearZero) {
  HcFixture f;
  const auto scr = build_stimuli(default_spec(), 20, StimulusCondition::scrambled, SeedKey{8, "st", 0});
  const SweepRequest req{&f.w, &scr, f.ind, gaussian_corruption(3), SeedKey{8, "p", 0}};
  const SweepTable t = component_sweep(req, ComponentKind::head);
  for (const auto& e : t.entries) {
    const auto& r = e.result;
    const double effect = r.absolute_units ? r.mean_ld.patched - r.mean_ld.corrupt : r.recovery;
    EXPECT_LE(std::abs(effect), 5.0) << e.label;
  }
}

TEST(Sweeps, BottleneckAtAndAfterAggregation) {
  HcFixture f;
  const SweepTable t = layer_ablation(f.req());
  for (std::size_t l = f.bp.aggregation_layer; l < 8; ++l) EXPECT_GE(t.entries[l].result.mitigation, 95.0);
}

TEST(Sweeps, TriggerPositionsAreInertExceptLast) {
  HcFixture f;
  const int layer = static_cast<int>(f.bp.aggregation_layer);
  const SweepTable cum = trigger_position_ablation(f.req(), layer, PositionMode::cumulative);
  const SweepTable one = trigger_position_ablation(f.req(), layer, PositionMode::single);
  EXPECT_LE(std::abs(entry(cum, "trig+0..trig+7").result.mitigation), 5.0);
  EXPECT_GE(entry(cum, "trig+0..trig+8").result.mitigation, 95.0);
  EXPECT_LE(std::abs(entry(one, "trig+3").result.mitigation), 5.0);
}

TEST(Knockout, EmptyMaskIsClean) {
  HcFixture f;
  const auto ld = kv_knockout(f.w, f.stim, f.ind, {});
  for (std::size_t i = 0; i < f.stim.size(); ++i) EXPECT_EQ(ld[i], stimulus_logit_diff(f.w, f.stim[i], f.ind));
}

TEST(Knockout, FullMaskHidesTriggerIdentity) {
  HcFixture f;
  std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7};
  const auto ld = kv_knockout(f.w, f.stim, f.ind, all);
  std::vector<Stimulus> swapped = f.stim;
  const auto& pool = default_spec().neutral_pool;
  for (auto& s : swapped) {
    auto pos = s.trigger_positions();
    for (std::size_t k = 0; k + 1 < pos.size(); ++k) s.tokens[static_cast<std::size_t>(pos[k])] = pool[k];
  }
  const auto ld2 = kv_knockout(f.w, swapped, f.ind, all);
  for (std::size_t i = 0; i < ld.size(); ++i) EXPECT_NEAR(ld[i], ld2[i], 1e-6);
}

TEST(Knockout, ReverseMaskAboveAggregationHasNoEffect) {
  HcFixture f;
  const auto pts = kv_knockout_schedule(f.w, f.stim, f.ind, KnockoutSchedule::reverse);
  for (const auto& p : pts) {
    if (p.layers.empty() || p.layers.front() <= static_cast<int>(f.bp.aggregation_layer)) continue;
    for (std::size_t i = 0; i < f.stim.size(); ++i) EXPECT_NEAR(p.logit_diffs[i], pts[0].logit_diffs[i], 1e-6);
  }
}

TEST(CorruptionComparison, HandcraftedStructureIsInvariant) {
  HcFixture f;
  const CorruptionComparison cc =
      corruption_comparison(f.w, f.stim, f.ind, default_spec(), 3, SeedKey{9, "cmp", 0});
  EXPECT_TRUE(cc.same_largest);
  EXPECT_TRUE(cc.same_bottleneck);
  EXPECT_EQ(cc.gaussian.largest_component, "mlp[L7]");
  for (std::size_t l = f.bp.aggregation_layer; l < 8; ++l) {
    const auto& b = cc.gaussian.bottleneck_layers;
    EXPECT_NE(std::find(b.begin(), b.end(), static_cast<int>(l)), b.end());
  }
}

TEST(Quartiles, LinearInterpolation) {
  const Quartiles q = quartiles({4, 1, 3, 2, 5});
  EXPECT_EQ(q.median, 3.0);
  EXPECT_EQ(q.q1, 2.0);
  EXPECT_EQ(q.q3, 4.0);
  EXPECT_EQ(q.min, 1.0);
  EXPECT_EQ(q.max, 5.0);
  EXPECT_EQ(quartiles({1, 2}).median, 1.5);
}

TEST(ThreePass, NoiseDrawsDifferAcrossPrompts) {
  HcFixture f;
  const std::vector<Stimulus> twins{f.stim[0], f.stim[0]};
  const auto res = run_site_sets(f.w, twins, f.ind, gaussian_corruption(2), {{}}, PatchMode::restore,
                                 SeedKey{10, "p", 0});
  EXPECT_NE(res[0].prompts[0].per_seed[0].corrupt, res[0].prompts[1].per_seed[0].corrupt);
  EXPECT_NE(res[0].prompts[0].per_seed[0].corrupt, res[0].prompts[0].per_seed[1].corrupt);
}
