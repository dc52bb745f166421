#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "triglab/handcraft.hpp"
#include "triglab/language.hpp"
#include "triglab/model.hpp"
#include "triglab/probes.hpp"
#include "triglab/train.hpp"

namespace triglab {

enum class ForgeKind { handcraft, train };

/// Everything `triglab forge` reads from its key = value config file.
struct ForgeConfig {
  ForgeKind kind = ForgeKind::handcraft;
  ModelConfig model;
  LanguageParams language;
  // handcraft
  CircuitBlueprint blueprint;
  bool blueprint_layers_set = false;
  // train
  TrainConfig train;
  std::size_t n_sequences = 4000;
  std::size_t seq_len = 24;
  double stray_rate = 0.0;
  double decoy_rate = 0.05;
};

/// Defaults for a kind: handcraft uses the desk-scale shape with identity
/// norm, train a smaller rms model.
ForgeConfig default_forge_config(ForgeKind kind);

/// Parse `key = value` lines ('#' comments, optional [section] headers
/// ignored). Unknown keys and bad values throw ContractViolation.
ForgeConfig parse_forge_config(ForgeKind kind, const std::string& text);

struct ForgedModel {
  ModelWeights weights;
  nlohmann::json metadata;
  std::optional<CircuitBlueprint> blueprint;
  std::vector<double> loss_curve;
};

ForgedModel forge(const ForgeConfig& fc);

/// Writes the model, plus `<out>.blueprint.json` or `<out>.loss.csv`.
std::vector<std::filesystem::path> write_forged(const ForgedModel& m, const std::filesystem::path& out);

/// A model file together with its sidecars and regenerated language.
struct LoadedModel {
  std::filesystem::path path;
  ModelWeights weights;
  nlohmann::json metadata;
  LanguageSpec spec;
  std::optional<CircuitBlueprint> blueprint;
};

LoadedModel load_with_sidecars(const std::filesystem::path& path);

std::filesystem::path blueprint_sidecar(const std::filesystem::path& model);
std::filesystem::path probes_sidecar(const std::filesystem::path& model);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Invariant suite behind `triglab verify`. Structural read failures throw
/// ModelIoError; everything else becomes a failed check.
std::vector<CheckResult> verify_model(const std::filesystem::path& path);

}  // namespace triglab
