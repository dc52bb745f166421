#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "triglab/language.hpp"
#include "triglab/model.hpp"
#include "triglab/tensor.hpp"

namespace triglab {

/// One aggregation head: reads the marker of `word` and writes onto c.
struct AggregationHead {
  int word = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
  bool operator==(const AggregationHead&) const = default;
};

/// Ground truth for a handcrafted model. The first block is chosen by the
/// caller; the second is filled in by handcraft_model.
struct CircuitBlueprint {
  std::vector<std::size_t> composition_layers;  ///< two consecutive layers
  std::size_t aggregation_layer = 0;            ///< layer whose heads complete the sum
  std::size_t readout_layer = 0;                ///< must be L-1
  double theta = 2.5;
  double beta = 12.0;
  bool rotate = true;  ///< hide the canonical basis behind a random rotation
  std::uint64_t rotation_seed = 7;

  std::vector<double> d_lang;  ///< unit; F embeddings carry +alpha·d_lang
  std::vector<double> c;       ///< unit latent channel, orthogonal to d_lang
  Tensor2 marker_subspace;     ///< 3 × d, orthonormal rows, one per word
  std::vector<AggregationHead> aggregation_heads;
  std::size_t language_head = 0;  ///< layer-0 head spreading language context

  /// Throws ContractViolation if the layer plan does not fit `config`.
  void validate(const ModelConfig& config) const;
};

/// Layer plan used when nothing else is requested. For L >= 6 the
/// composition layers are {1, 2}; smaller models start at layer 0.
CircuitBlueprint default_blueprint(const ModelConfig& config);

struct HandcraftedModel {
  ModelWeights weights;
  CircuitBlueprint blueprint;
};

/// Build the trigger circuit into `config` (identity norm, d >= 32 + rank).
/// Head w of each composition layer is the detector for word w.
HandcraftedModel handcraft_model(const ModelConfig& config, const LanguageSpec& spec, const CircuitBlueprint& bp);

/// Smallest d_model that handcraft_model accepts for this language.
std::size_t handcraft_min_d_model(const LanguageParams& p);

/// Positional frequencies used by the previous-token heads (radians / position).
std::vector<double> handcraft_frequencies();

nlohmann::json to_json(const CircuitBlueprint& bp);
CircuitBlueprint blueprint_from_json(const nlohmann::json& j);

}  // namespace triglab
