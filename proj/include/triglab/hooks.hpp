#pragma once

#include <string>
#include <vector>

#include "triglab/tensor.hpp"

namespace triglab {

enum class SiteKind {
  embedding_out,  ///< E[token] + P[pos]
  residual_in,    ///< residual entering a layer
  residual_out,   ///< residual leaving a layer (residual_out(L-1) is the final residual)
  attn_out,       ///< summed attention write of a layer
  head_out,       ///< one head's residual write, x_h · W_O[rows of h]
  mlp_out,        ///< MLP write of a layer
  kv,             ///< key and value rows of a layer, concatenated (2·d wide)
  final_logits,
};

/// A hook location plus the sequence positions it touches. Negative
/// positions count from the end (-1 is the last position). When
/// `all_positions` is set the position list is ignored.
struct HookSite {
  SiteKind kind = SiteKind::residual_in;
  int layer = -1;
  int head = -1;
  std::vector<int> positions;
  bool all_positions = false;

  static HookSite embedding(std::vector<int> pos) { return {SiteKind::embedding_out, -1, -1, std::move(pos)}; }
  static HookSite resid_in(int layer, std::vector<int> pos) { return {SiteKind::residual_in, layer, -1, std::move(pos)}; }
  static HookSite resid_out(int layer, std::vector<int> pos) { return {SiteKind::residual_out, layer, -1, std::move(pos)}; }
  static HookSite attn(int layer, std::vector<int> pos) { return {SiteKind::attn_out, layer, -1, std::move(pos)}; }
  static HookSite head_at(int layer, int h, std::vector<int> pos) { return {SiteKind::head_out, layer, h, std::move(pos)}; }
  static HookSite mlp(int layer, std::vector<int> pos) { return {SiteKind::mlp_out, layer, -1, std::move(pos)}; }
  static HookSite kv_at(int layer, std::vector<int> pos) { return {SiteKind::kv, layer, -1, std::move(pos)}; }
  static HookSite logits(std::vector<int> pos) { return {SiteKind::final_logits, -1, -1, std::move(pos)}; }

  HookSite everywhere() const {
    HookSite s = *this;
    s.positions.clear();
    s.all_positions = true;
    return s;
  }

  /// Positions mapped into [0, seq_len); throws on out-of-range entries.
  std::vector<std::size_t> resolve(std::size_t seq_len) const;
  /// Short stable label such as "resid_out[L3]@-1".
  std::string label() const;
};

enum class EditAction { replace, zero, add };

/// One edit; `payload` has one row per resolved position (in resolve()
/// order) and the site's width in columns. Unused for `zero`.
struct Edit {
  HookSite site;
  EditAction action = EditAction::replace;
  Tensor2 payload;
};

struct InterventionSpec {
  std::vector<Edit> edits;

  bool empty() const { return edits.empty(); }
  InterventionSpec& replace(HookSite site, Tensor2 values);
  InterventionSpec& zero(HookSite site);
  InterventionSpec& add(HookSite site, Tensor2 delta);
  /// Concatenate edits from another spec.
  InterventionSpec& merge(const InterventionSpec& other);
};

std::string to_string(SiteKind k);

}  // namespace triglab
