#pragma once

#include <optional>
#include <string>
#include <vector>

#include "triglab/corruption.hpp"
#include "triglab/forward.hpp"
#include "triglab/hooks.hpp"
#include "triglab/stimuli.hpp"

namespace triglab {

inline constexpr double kDegenerateDenominator = 1e-9;
/// Below this clean/corrupt gap, reports switch to absolute LD units.
inline constexpr double kAbsoluteUnitsGap = 0.5;

/// (patched − corrupt) / (clean − corrupt) × 100, or nothing when the
/// denominator is below 1e-9.
std::optional<double> recovery(double ld_clean, double ld_corrupt, double ld_patched);
inline double mitigation_from_recovery(double r) { return 100.0 - r; }

struct LdTriple {
  double clean = 0.0;
  double corrupt = 0.0;
  double patched = 0.0;  ///< patched (or ablated) run
};

struct PromptOutcome {
  std::size_t prompt = 0;
  std::vector<LdTriple> per_seed;
  LdTriple mean;  ///< seed average
  double recovery = 0.0;
  bool degenerate = false;
};

/// Aggregation order: LD averaged over seeds, recovery per prompt, then
/// the mean over non-degenerate prompts.
struct PatchResult {
  std::vector<PromptOutcome> prompts;
  double recovery = 0.0;
  double mitigation = 100.0;
  double recovery_std = 0.0;  ///< population std across valid prompts
  std::size_t n_valid = 0;
  std::size_t n_degenerate = 0;
  LdTriple mean_ld;           ///< mean over all prompts
  bool absolute_units = false;
};

/// Fill every aggregate of `r` from its per-prompt seed records.
void aggregate(PatchResult& r);

enum class PatchMode {
  restore,  ///< corrupt run with clean values at the sites
  ablate,   ///< clean run with corrupt values at the sites
};

/// Every site set shares one clean pass per prompt and one corrupt pass per
/// (prompt, seed). Seed s of prompt i uses key.with("corrupt", i).at(s).
std::vector<PatchResult> run_site_sets(const ModelWeights& w, const std::vector<Stimulus>& stimuli,
                                       const IndicatorSets& ind, const CorruptionMethod& method,
                                       const std::vector<std::vector<HookSite>>& site_sets, PatchMode mode,
                                       const SeedKey& key);

/// Clean, corrupt, and corrupt-plus-restored passes for one stimulus.
PatchResult three_pass(const ModelWeights& w, const Stimulus& s, const IndicatorSets& ind,
                       const CorruptionMethod& method, const std::vector<HookSite>& patch_sites, const SeedKey& key);

/// Clean pass with corrupt values injected at `ablate_sites`. Read the
/// result's `mitigation`; values above 100 are allowed.
PatchResult ablation(const ModelWeights& w, const Stimulus& s, const IndicatorSets& ind,
                     const CorruptionMethod& method, const std::vector<HookSite>& ablate_sites, const SeedKey& key);

/// Run `base_run` forward with `sites` overwritten by the matching values
/// of `source`. Both caches must come from equal-length sequences.
TraceCache splice(const ModelWeights& w, const TraceCache& base_run, const TraceCache& source,
                  const std::vector<HookSite>& sites);

}  // namespace triglab
