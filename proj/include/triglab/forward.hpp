#pragma once

#include <cstddef>
#include <vector>

#include "triglab/hooks.hpp"
#include "triglab/model.hpp"
#include "triglab/tensor.hpp"

namespace triglab {

using TokenSeq = std::vector<int>;

/// Activations of one layer, all post-edit (the values that actually flowed).
struct LayerTrace {
  Tensor2 resid_in;      // n × d
  Tensor2 q, k, v;       // n × d
  Tensor3 attn_weights;  // H × n × n
  Tensor3 head_x;        // H × n × d_head, per-head output before W_O
  Tensor3 head_out;      // H × n × d, per-head residual write
  Tensor2 attn_out;      // n × d
  Tensor2 resid_mid;     // n × d, input to the MLP sublayer
  Tensor2 mlp_hidden;    // n × d_mlp, post-ReLU
  Tensor2 mlp_out;       // n × d
  Tensor2 resid_out;     // n × d
};

struct TraceCache {
  TokenSeq tokens;
  Tensor2 embedding_out;  // n × d
  std::vector<LayerTrace> layers;
  Tensor2 final_resid;  // n × d
  Tensor2 logits;       // n × V

  std::size_t seq_len() const { return tokens.size(); }
  /// Activation rows of a site at its resolved positions (width per site kind).
  Tensor2 site_values(const HookSite& site) const;
};

/// Single forward pass with every hook cached and the given edits applied
/// before downstream consumption. Attention is causal.
TraceCache forward(const ModelWeights& w, const TokenSeq& tokens, const InterventionSpec& spec = {});

/// Run only the first `n_blocks` layers, then the final norm and
/// unembedding. `n_blocks == 0` gives the embedding-to-logits linear path.
TraceCache forward_truncated(const ModelWeights& w, const TokenSeq& tokens, std::size_t n_blocks);

/// Continue a pass from `start_layer`, reusing `base` for everything before
/// it. `base` must come from the same tokens, and `spec` must not edit any
/// site before `start_layer` except embedding edits already reflected in
/// `base`. Produces the same cache as a full forward under those conditions.
TraceCache forward_from(const ModelWeights& w, const TraceCache& base, std::size_t start_layer,
                        const InterventionSpec& spec);

/// Recompute head h's residual write x_h · W_O[h·d_h:(h+1)·d_h, :] at every position.
Tensor2 per_head_contribution(const ModelWeights& w, const TraceCache& cache, std::size_t layer, std::size_t head);

/// Attention weight of every head from `from_pos` to each entry of
/// `to_positions` (H × |to|). Positions may be negative.
Tensor2 attention_to_positions(const TraceCache& cache, std::size_t layer, int from_pos,
                               const std::vector<int>& to_positions);

std::vector<double> logits_at(const TraceCache& cache, int position);

/// Final-norm(residual) · U for one residual row.
std::vector<double> unembed_row(const ModelWeights& w, std::span<const double> resid);

/// Normalization as configured (rms, or pass-through for identity).
Tensor2 apply_norm(const ModelConfig& c, const Tensor2& x, const std::vector<double>& gain);

}  // namespace triglab
