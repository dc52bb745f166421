#include "triglab/hooks.hpp"

#include "triglab/error.hpp"

namespace triglab {

std::vector<std::size_t> HookSite::resolve(std::size_t seq_len) const {
  std::vector<std::size_t> out;
  if (all_positions) {
    out.resize(seq_len);
    for (std::size_t i = 0; i < seq_len; ++i) out[i] = i;
    return out;
  }
  out.reserve(positions.size());
  const auto n = static_cast<long>(seq_len);
  for (int p : positions) {
    const long r = p < 0 ? n + p : p;
    require(r >= 0 && r < n, "HookSite " + label() + ": position " + std::to_string(p) +
                                 " outside sequence of length " + std::to_string(seq_len));
    out.push_back(static_cast<std::size_t>(r));
  }
  return out;
}

std::string to_string(SiteKind k) {
  switch (k) {
    case SiteKind::embedding_out: return "embed";
    case SiteKind::residual_in: return "resid_in";
    case SiteKind::residual_out: return "resid_out";
    case SiteKind::attn_out: return "attn";
    case SiteKind::head_out: return "head";
    case SiteKind::mlp_out: return "mlp";
    case SiteKind::kv: return "kv";
    case SiteKind::final_logits: return "logits";
  }
  return "?";
}

std::string HookSite::label() const {
  std::string s = to_string(kind);
  if (layer >= 0) {
    s += "[L" + std::to_string(layer);
    if (head >= 0) s += "H" + std::to_string(head);
    s += "]";
  }
  s += "@";
  if (all_positions) return s + "all";
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(positions[i]);
  }
  return s;
}

InterventionSpec& InterventionSpec::replace(HookSite site, Tensor2 values) {
  edits.push_back({std::move(site), EditAction::replace, std::move(values)});
  return *this;
}

InterventionSpec& InterventionSpec::zero(HookSite site) {
  edits.push_back({std::move(site), EditAction::zero, {}});
  return *this;
}

InterventionSpec& InterventionSpec::add(HookSite site, Tensor2 delta) {
  edits.push_back({std::move(site), EditAction::add, std::move(delta)});
  return *this;
}

InterventionSpec& InterventionSpec::merge(const InterventionSpec& other) {
  edits.insert(edits.end(), other.edits.begin(), other.edits.end());
  return *this;
}

}  // namespace triglab
