#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "triglab/corruption.hpp"
#include "triglab/forge.hpp"
#include "triglab/report.hpp"

namespace triglab {

struct ExperimentConfig {
  std::filesystem::path model;
  std::string experiment;
  std::size_t n_prompts = 100;
  std::size_t n_seeds = 5;
  CorruptionKind corruption = CorruptionKind::gaussian;
  std::uint64_t seed = 0;
  std::filesystem::path out = "triglab-out";
  // experiment-specific
  std::optional<StimulusCondition> condition;  ///< attn-map, head-sweep
  std::optional<int> layer;                    ///< ablate-trigpos, head-sweep
  std::optional<std::size_t> n_pairs;          ///< probes, dnat (default n_prompts)

  /// Throws ContractViolation on an unknown experiment or zero counts.
  void validate() const;
};

const std::vector<std::string>& experiment_names();

nlohmann::json to_json(const ExperimentConfig& c);

/// Runs one named experiment. The probes experiment also writes the fitted
/// probe weights next to the report as probes.weights.json.
Report run_experiment(const ExperimentConfig& c, const LoadedModel& m);

}  // namespace triglab
