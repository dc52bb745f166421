#pragma once

#include <string>
#include <vector>

#include "triglab/patching.hpp"

namespace triglab {

/// One measured component: a label, the sites it patches and its result.
struct SweepEntry {
  std::string label;
  int layer = -1;
  int head = -1;
  int position = 0;  ///< trigger offset for position ablations
  std::vector<HookSite> sites;
  PatchResult result;
};

struct SweepTable {
  std::string name;
  PatchMode mode = PatchMode::restore;
  std::vector<SweepEntry> entries;
};

struct SweepRequest {
  const ModelWeights* model = nullptr;
  const std::vector<Stimulus>* stimuli = nullptr;
  IndicatorSets indicators;
  CorruptionMethod method;
  SeedKey key;
};

/// Restore residual_in(ℓ) at p−1 for each layer ℓ (or residual_out with
/// `after_layer`).
SweepTable cumulative_residual_sweep(const SweepRequest& req, bool after_layer = false);

enum class ComponentKind { mlp, attn, head };
/// Patch each component's write at p−1 on its own. `layers` selects the
/// layers for the head kind (empty: every layer).
SweepTable component_sweep(const SweepRequest& req, ComponentKind kind, std::vector<int> layers = {});

/// Inject corrupt residual_in(ℓ) at p−1, one layer at a time.
SweepTable layer_ablation(const SweepRequest& req);

enum class PositionMode { single, cumulative };
/// Ablate residual_in(layer) at trig+k alone, or at trig+0..trig+k.
SweepTable trigger_position_ablation(const SweepRequest& req, int layer, PositionMode mode);

struct KnockoutPoint {
  std::string label;
  std::vector<int> layers;
  std::vector<double> logit_diffs;  ///< per stimulus
  double mean = 0.0;
};

/// Logit difference at p−1 of a clean pass with K and V zeroed at the
/// trigger positions of every listed layer (queries untouched).
std::vector<double> kv_knockout(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                const IndicatorSets& ind, const std::vector<int>& mask_layers);

enum class KnockoutSchedule { cumulative, reverse };
/// cumulative: masks [0..k]; reverse: masks [k..L). Point 0 is the unmasked run.
std::vector<KnockoutPoint> kv_knockout_schedule(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                                const IndicatorSets& ind, KnockoutSchedule schedule);

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
};
Quartiles quartiles(std::vector<double> v);

/// Structural read-out of a model under one corruption method.
struct StructuralSummary {
  std::string largest_component;   ///< label of the component with the highest recovery
  std::vector<int> bottleneck_layers;  ///< layers whose p−1 ablation reaches 95% mitigation
  SweepTable components;  ///< mlp and attn per layer
  SweepTable ablations;   ///< residual_in at p−1 per layer
  std::vector<double> corrupt_baseline;  ///< per-prompt corrupt LD
  Quartiles baseline_quartiles;
};

StructuralSummary structural_summary(const SweepRequest& req, double bottleneck_threshold = 95.0);

struct CorruptionComparison {
  StructuralSummary gaussian;
  StructuralSummary neutral;
  bool same_largest = false;
  bool same_bottleneck = false;
};

/// Both methods on the same prompts with the same seed count.
CorruptionComparison corruption_comparison(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                           const IndicatorSets& ind, const LanguageSpec& spec, std::size_t n_seeds,
                                           const SeedKey& key);

/// The entry with the highest aggregate recovery.
const SweepEntry& strongest(const SweepTable& t);

}  // namespace triglab
