#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "triglab/rng.hpp"
#include "triglab/tensor.hpp"

namespace triglab {

enum class NormMode { rms, identity };

/// How the weights came to be. Identity normalization is reserved for
/// hand-constructed weights.
enum class ModelOrigin { trained, handcrafted };

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_mlp = 256;
  std::size_t vocab_size = 160;
  std::size_t max_seq_len = 64;
  NormMode norm_mode = NormMode::rms;
  double norm_eps = 1e-6;
  ModelOrigin origin = ModelOrigin::trained;

  std::size_t d_head() const { return d_model / n_heads; }
  /// Throws ContractViolation when any invariant fails.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Weight convention: activations are row vectors, so a projection is
/// `x · W` with W stored (in × out). Head h of the output projection owns
/// rows [h·d_head, (h+1)·d_head) of W_O.
struct LayerWeights {
  Tensor2 w_q, w_k, w_v, w_o;  // d × d
  std::vector<double> attn_gain;
  Tensor2 w_up;    // d × d_mlp
  Tensor2 w_down;  // d_mlp × d
  std::vector<double> mlp_gain;
};

struct ModelWeights {
  ModelConfig config;
  Tensor2 tok_embed;  // V × d
  Tensor2 pos_embed;  // max_seq_len × d
  std::vector<LayerWeights> layers;
  std::vector<double> final_gain;
  Tensor2 unembed;  // d × V

  /// Zero-filled weights with unit norm gains.
  static ModelWeights zeros(const ModelConfig& config);
  /// Gaussian init with the given std; norm gains start at 1.
  static ModelWeights random(const ModelConfig& config, const SeedKey& key, double std = 0.02);

  /// Shapes consistent with config and all entries finite.
  void validate() const;
  std::size_t parameter_count() const;
  bool operator==(const ModelWeights&) const;
};

/// Visit every parameter tensor in a fixed canonical order. The name is
/// stable and used as the tensor key in model files.
void for_each_param(ModelWeights& w, const std::function<void(const std::string&, std::span<double>)>& fn);
void for_each_param(const ModelWeights& w,
                    const std::function<void(const std::string&, std::span<const double>)>& fn);

/// Shape of a named parameter (rows, cols); vectors report (1, n).
std::pair<std::size_t, std::size_t> param_shape(const ModelConfig& config, const std::string& name);

std::string to_string(NormMode m);
NormMode norm_mode_from_string(const std::string& s);
std::string to_string(ModelOrigin o);
ModelOrigin origin_from_string(const std::string& s);

}  // namespace triglab
