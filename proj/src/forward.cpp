#include "triglab/forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"

namespace triglab {
namespace {

std::size_t site_width(const ModelConfig& c, SiteKind k) {
  switch (k) {
    case SiteKind::kv: return 2 * c.d_model;
    case SiteKind::final_logits: return c.vocab_size;
    default: return c.d_model;
  }
}

bool is_layered(SiteKind k) {
  return k != SiteKind::embedding_out && k != SiteKind::final_logits;
}

struct ResolvedEdit {
  const Edit* edit;
  std::vector<std::size_t> positions;
};

/// Validated edits indexed for lookup during the pass.
class EditTable {
 public:
  EditTable(const ModelConfig& c, const InterventionSpec& spec, std::size_t n) {
    std::set<std::tuple<int, int, int, std::size_t>> seen;
    for (const auto& e : spec.edits) {
      const auto& s = e.site;
      if (is_layered(s.kind))
        require(s.layer >= 0 && static_cast<std::size_t>(s.layer) < c.n_layers,
                "intervention " + s.label() + ": layer out of range");
      if (s.kind == SiteKind::head_out)
        require(s.head >= 0 && static_cast<std::size_t>(s.head) < c.n_heads,
                "intervention " + s.label() + ": head out of range");
      ResolvedEdit r{&e, s.resolve(n)};
      if (e.action != EditAction::zero) {
        require(e.payload.rows() == r.positions.size() && e.payload.cols() == site_width(c, s.kind),
                "intervention " + s.label() + ": payload shape does not match the site");
      }
      for (std::size_t p : r.positions) {
        auto key = std::make_tuple(static_cast<int>(s.kind), s.layer, s.head, p);
        require(seen.insert(key).second, "intervention " + s.label() + ": more than one edit at position " +
                                             std::to_string(p));
      }
      edits_.push_back(std::move(r));
    }
  }

  bool touches_before(std::size_t layer) const {
    for (const auto& r : edits_) {
      const auto& s = r.edit->site;
      if (is_layered(s.kind) && static_cast<std::size_t>(s.layer) < layer) return true;
    }
    return false;
  }

  void apply(SiteKind kind, int layer, int head, Tensor2& act) const {
    for (const auto& r : edits_) {
      const auto& s = r.edit->site;
      if (s.kind != kind || s.layer != layer || s.head != head) continue;
      for (std::size_t i = 0; i < r.positions.size(); ++i) {
        auto row = act.row(r.positions[i]);
        switch (r.edit->action) {
          case EditAction::zero: std::fill(row.begin(), row.end(), 0.0); break;
          case EditAction::replace: {
            auto src = r.edit->payload.row(i);
            std::copy(src.begin(), src.end(), row.begin());
            break;
          }
          case EditAction::add: add_inplace(row, r.edit->payload.row(i)); break;
        }
      }
    }
  }

  // kv payload rows are [k | v].
  void apply_kv(int layer, Tensor2& k, Tensor2& v) const {
    const std::size_t d = k.cols();
    for (const auto& r : edits_) {
      const auto& s = r.edit->site;
      if (s.kind != SiteKind::kv || s.layer != layer) continue;
      for (std::size_t i = 0; i < r.positions.size(); ++i) {
        auto krow = k.row(r.positions[i]);
        auto vrow = v.row(r.positions[i]);
        if (r.edit->action == EditAction::zero) {
          std::fill(krow.begin(), krow.end(), 0.0);
          std::fill(vrow.begin(), vrow.end(), 0.0);
          continue;
        }
        auto src = r.edit->payload.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          if (r.edit->action == EditAction::replace) {
            krow[j] = src[j];
            vrow[j] = src[d + j];
          } else {
            krow[j] += src[j];
            vrow[j] += src[d + j];
          }
        }
      }
    }
  }

 private:
  std::vector<ResolvedEdit> edits_;
};

void check_tokens(const ModelConfig& c, const TokenSeq& tokens) {
  require(!tokens.empty(), "forward: empty token sequence");
  require(tokens.size() <= c.max_seq_len, "forward: sequence longer than max_seq_len");
  for (int t : tokens)
    require(t >= 0 && static_cast<std::size_t>(t) < c.vocab_size,
            "forward: token id " + std::to_string(t) + " out of range");
}

Tensor2 relu(Tensor2 x) {
  for (auto& v : x.flat()) v = v > 0.0 ? v : 0.0;
  return x;
}

void run_layer(const ModelWeights& w, std::size_t li, const EditTable& edits, Tensor2& x, LayerTrace& t) {
  const auto& c = w.config;
  const auto& lw = w.layers[li];
  const std::size_t n = x.rows(), d = c.d_model, H = c.n_heads, dh = c.d_head();
  const int L = static_cast<int>(li);

  edits.apply(SiteKind::residual_in, L, -1, x);
  t.resid_in = x;

  const Tensor2 h = apply_norm(c, x, lw.attn_gain);
  t.q = matmul(h, lw.w_q);
  t.k = matmul(h, lw.w_k);
  t.v = matmul(h, lw.w_v);
  edits.apply_kv(L, t.k, t.v);

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  t.attn_weights = Tensor3(H, n, n);
  t.head_x = Tensor3(H, n, dh);
  t.head_out = Tensor3(H, n, d);
  t.attn_out = Tensor2(n, d);
  std::vector<double> scores(n);
  for (std::size_t hd = 0; hd < H; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < dh; ++p) s += t.q(i, off + p) * t.k(j, off + p);
        scores[j] = s * scale;
      }
      softmax_inplace(std::span(scores.data(), i + 1));
      auto xrow = t.head_x.slice_row(hd, i);
      for (std::size_t j = 0; j <= i; ++j) {
        t.attn_weights(hd, i, j) = scores[j];
        const double a = scores[j];
        for (std::size_t p = 0; p < dh; ++p) xrow[p] += a * t.v(j, off + p);
      }
    }
    // Head write: x_h · W_O[off:off+dh, :]
    Tensor2 contrib(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto xrow = t.head_x.slice_row(hd, i);
      auto out = contrib.row(i);
      for (std::size_t p = 0; p < dh; ++p) {
        const double xv = xrow[p];
        auto worow = lw.w_o.row(off + p);
        for (std::size_t j = 0; j < d; ++j) out[j] += xv * worow[j];
      }
    }
    edits.apply(SiteKind::head_out, L, static_cast<int>(hd), contrib);
    t.head_out.set_slice(hd, contrib);
    add_inplace(t.attn_out, contrib);
  }
  edits.apply(SiteKind::attn_out, L, -1, t.attn_out);

  add_inplace(x, t.attn_out);
  t.resid_mid = x;

  const Tensor2 h2 = apply_norm(c, x, lw.mlp_gain);
  t.mlp_hidden = relu(matmul(h2, lw.w_up));
  t.mlp_out = matmul(t.mlp_hidden, lw.w_down);
  edits.apply(SiteKind::mlp_out, L, -1, t.mlp_out);
  add_inplace(x, t.mlp_out);

  edits.apply(SiteKind::residual_out, L, -1, x);
  t.resid_out = x;
}

Tensor2 embed(const ModelWeights& w, const TokenSeq& tokens) {
  const std::size_t n = tokens.size(), d = w.config.d_model;
  Tensor2 x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    auto e = w.tok_embed.row(static_cast<std::size_t>(tokens[i]));
    auto p = w.pos_embed.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = e[j] + p[j];
  }
  return x;
}

void finish(const ModelWeights& w, const EditTable& edits, Tensor2& x, TraceCache& cache) {
  cache.final_resid = x;
  cache.logits = matmul(apply_norm(w.config, x, w.final_gain), w.unembed);
  edits.apply(SiteKind::final_logits, -1, -1, cache.logits);
}

}  // namespace

Tensor2 apply_norm(const ModelConfig& c, const Tensor2& x, const std::vector<double>& gain) {
  if (c.norm_mode == NormMode::identity) return x;
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = rms_normalize(x.row(i), gain, c.norm_eps);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

TraceCache forward(const ModelWeights& w, const TokenSeq& tokens, const InterventionSpec& spec) {
  const auto& c = w.config;
  check_tokens(c, tokens);
  const std::size_t n = tokens.size();
  EditTable edits(c, spec, n);

  TraceCache cache;
  cache.tokens = tokens;
  Tensor2 x = embed(w, tokens);
  edits.apply(SiteKind::embedding_out, -1, -1, x);
  cache.embedding_out = x;

  cache.layers.resize(c.n_layers);
  for (std::size_t li = 0; li < c.n_layers; ++li) run_layer(w, li, edits, x, cache.layers[li]);
  finish(w, edits, x, cache);
  return cache;
}

TraceCache forward_truncated(const ModelWeights& w, const TokenSeq& tokens, std::size_t n_blocks) {
  require(n_blocks <= w.config.n_layers, "forward_truncated: more blocks than layers");
  const auto& c = w.config;
  check_tokens(c, tokens);
  const std::size_t n = tokens.size();
  EditTable edits(c, {}, n);
  TraceCache cache;
  cache.tokens = tokens;
  Tensor2 x = embed(w, tokens);
  cache.embedding_out = x;
  cache.layers.resize(n_blocks);
  for (std::size_t li = 0; li < n_blocks; ++li) run_layer(w, li, edits, x, cache.layers[li]);
  finish(w, edits, x, cache);
  return cache;
}

TraceCache forward_from(const ModelWeights& w, const TraceCache& base, std::size_t start_layer,
                        const InterventionSpec& spec) {
  const auto& c = w.config;
  require(start_layer <= c.n_layers && base.layers.size() == c.n_layers, "forward_from: bad start layer");
  const std::size_t n = base.seq_len();
  EditTable edits(c, spec, n);
  require(!edits.touches_before(start_layer), "forward_from: spec edits a layer before the resume point");

  TraceCache cache;
  cache.tokens = base.tokens;
  cache.embedding_out = base.embedding_out;
  cache.layers.resize(c.n_layers);
  for (std::size_t li = 0; li < start_layer; ++li) cache.layers[li] = base.layers[li];
  Tensor2 x = start_layer == 0 ? base.embedding_out : base.layers[start_layer - 1].resid_out;
  for (std::size_t li = start_layer; li < c.n_layers; ++li) run_layer(w, li, edits, x, cache.layers[li]);
  finish(w, edits, x, cache);
  return cache;
}

Tensor2 TraceCache::site_values(const HookSite& site) const {
  const auto pos = site.resolve(seq_len());
  auto gather = [&](const Tensor2& src) {
    Tensor2 out(pos.size(), src.cols());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      auto r = src.row(pos[i]);
      std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
  };
  auto layer = [&]() -> const LayerTrace& {
    require(site.layer >= 0 && static_cast<std::size_t>(site.layer) < layers.size(),
            "site_values: layer out of range");
    return layers[static_cast<std::size_t>(site.layer)];
  };
  switch (site.kind) {
    case SiteKind::embedding_out: return gather(embedding_out);
    case SiteKind::residual_in: return gather(layer().resid_in);
    case SiteKind::residual_out: return gather(layer().resid_out);
    case SiteKind::attn_out: return gather(layer().attn_out);
    case SiteKind::mlp_out: return gather(layer().mlp_out);
    case SiteKind::final_logits: return gather(logits);
    case SiteKind::head_out: {
      const auto& l = layer();
      require(site.head >= 0 && static_cast<std::size_t>(site.head) < l.head_out.depth(),
              "site_values: head out of range");
      return gather(l.head_out.slice(static_cast<std::size_t>(site.head)));
    }
    case SiteKind::kv: {
      const auto& l = layer();
      const std::size_t d = l.k.cols();
      Tensor2 out(pos.size(), 2 * d);
      for (std::size_t i = 0; i < pos.size(); ++i) {
        auto kr = l.k.row(pos[i]);
        auto vr = l.v.row(pos[i]);
        auto o = out.row(i);
        std::copy(kr.begin(), kr.end(), o.begin());
        std::copy(vr.begin(), vr.end(), o.begin() + static_cast<std::ptrdiff_t>(d));
      }
      return out;
    }
  }
  throw ContractViolation("site_values: unknown site kind");
}

Tensor2 per_head_contribution(const ModelWeights& w, const TraceCache& cache, std::size_t layer, std::size_t head) {
  const auto& c = w.config;
  require(layer < c.n_layers && head < c.n_heads, "per_head_contribution: layer/head out of range");
  const auto& t = cache.layers[layer];
  const std::size_t n = cache.seq_len(), d = c.d_model, dh = c.d_head();
  Tensor2 xh(n, dh);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = t.head_x.slice_row(head, i);
    std::copy(r.begin(), r.end(), xh.row(i).begin());
  }
  Tensor2 wo_slice(dh, d);
  for (std::size_t p = 0; p < dh; ++p) {
    auto r = w.layers[layer].w_o.row(head * dh + p);
    std::copy(r.begin(), r.end(), wo_slice.row(p).begin());
  }
  return matmul(xh, wo_slice);
}

Tensor2 attention_to_positions(const TraceCache& cache, std::size_t layer, int from_pos,
                               const std::vector<int>& to_positions) {
  require(layer < cache.layers.size(), "attention_to_positions: layer out of range");
  const auto& a = cache.layers[layer].attn_weights;
  const std::size_t n = cache.seq_len();
  const auto from = HookSite{SiteKind::residual_in, 0, -1, {from_pos}}.resolve(n).front();
  const auto to = HookSite{SiteKind::residual_in, 0, -1, to_positions}.resolve(n);
  Tensor2 out(a.depth(), to.size());
  for (std::size_t h = 0; h < a.depth(); ++h)
    for (std::size_t j = 0; j < to.size(); ++j) out(h, j) = to[j] <= from ? a(h, from, to[j]) : 0.0;
  return out;
}

std::vector<double> logits_at(const TraceCache& cache, int position) {
  const auto p = HookSite{SiteKind::final_logits, -1, -1, {position}}.resolve(cache.seq_len()).front();
  auto r = cache.logits.row(p);
  return {r.begin(), r.end()};
}

std::vector<double> unembed_row(const ModelWeights& w, std::span<const double> resid) {
  Tensor2 x(1, resid.size(), std::vector<double>(resid.begin(), resid.end()));
  Tensor2 l = matmul(apply_norm(w.config, x, w.final_gain), w.unembed);
  return {l.flat().begin(), l.flat().end()};
}

}  // namespace triglab
