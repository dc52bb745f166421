#include <algorithm>
#include <cmath>

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"
#include "triglab/train.hpp"

namespace triglab {
namespace {

// Cross-entropy of one logit row; writes softmax − onehot into `dz` when given.
double cross_entropy(std::span<const double> z, int target, std::span<double> dz) {
  const std::size_t top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  const double m = z[top];
  double rest = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (j != top) rest += std::exp(z[j] - m);
  const double lse = m + std::log1p(rest);
  if (!dz.empty()) {
    for (std::size_t j = 0; j < z.size(); ++j) dz[j] = std::exp(z[j] - lse);
    dz[static_cast<std::size_t>(target)] -= 1.0;
  }
  return lse - z[static_cast<std::size_t>(target)];
}

// y = g ⊙ x / sqrt(mean(x²) + eps); accumulates into dx and dgain.
void norm_backward(const ModelConfig& c, const Tensor2& x, const std::vector<double>& gain, const Tensor2& dy,
                   Tensor2& dx, std::vector<double>& dgain) {
  if (c.norm_mode == NormMode::identity) {
    add_inplace(dx, dy);
    return;
  }
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto gr = dy.row(i);
    auto out = dx.row(i);
    double ms = 0.0;
    for (double v : xr) ms += v * v;
    ms = ms / static_cast<double>(d) + c.norm_eps;
    const double r = std::sqrt(ms);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += gain[j] * gr[j] * xr[j];
    const double k = s / (static_cast<double>(d) * r * ms);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += gain[j] * gr[j] / r - xr[j] * k;
      dgain[j] += gr[j] * xr[j] / r;
    }
  }
}

// Returns d(loss)/d(resid_in) given d(loss)/d(resid_out).
Tensor2 layer_backward(const ModelWeights& w, std::size_t li, const LayerTrace& t, const Tensor2& dout,
                       LayerWeights& g) {
  const auto& c = w.config;
  const auto& lw = w.layers[li];
  const std::size_t n = dout.rows(), H = c.n_heads, dh = c.d_head();

  // MLP
  Tensor2 dmid = dout;
  const Tensor2 h2 = apply_norm(c, t.resid_mid, lw.mlp_gain);
  matmul_tn_accumulate(t.mlp_hidden, dout, g.w_down);
  Tensor2 dpre = matmul_nt(dout, lw.w_down);
  for (std::size_t i = 0; i < dpre.size(); ++i)
    if (t.mlp_hidden.flat()[i] <= 0.0) dpre.flat()[i] = 0.0;
  matmul_tn_accumulate(h2, dpre, g.w_up);
  norm_backward(c, t.resid_mid, lw.mlp_gain, matmul_nt(dpre, lw.w_up), dmid, g.mlp_gain);

  // attention
  Tensor2 din = dmid;
  Tensor2 xcat(n, c.d_model);
  for (std::size_t hd = 0; hd < H; ++hd)
    for (std::size_t i = 0; i < n; ++i) {
      auto r = t.head_x.slice_row(hd, i);
      std::copy(r.begin(), r.end(), xcat.row(i).begin() + static_cast<std::ptrdiff_t>(hd * dh));
    }
  matmul_tn_accumulate(xcat, dmid, g.w_o);
  const Tensor2 dx = matmul_nt(dmid, lw.w_o);

  Tensor2 dq(n, c.d_model), dk(n, c.d_model), dv(n, c.d_model);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> da(n);
  for (std::size_t hd = 0; hd < H; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < n; ++i) {
      double dotp = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < dh; ++p) s += dx(i, off + p) * t.v(j, off + p);
        da[j] = s;
        dotp += t.attn_weights(hd, i, j) * s;
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double a = t.attn_weights(hd, i, j);
        const double ds = a * (da[j] - dotp) * scale;
        for (std::size_t p = 0; p < dh; ++p) {
          dq(i, off + p) += ds * t.k(j, off + p);
          dk(j, off + p) += ds * t.q(i, off + p);
          dv(j, off + p) += a * dx(i, off + p);
        }
      }
    }
  }
  const Tensor2 h = apply_norm(c, t.resid_in, lw.attn_gain);
  matmul_tn_accumulate(h, dq, g.w_q);
  matmul_tn_accumulate(h, dk, g.w_k);
  matmul_tn_accumulate(h, dv, g.w_v);
  Tensor2 dh_total = matmul_nt(dq, lw.w_q);
  add_inplace(dh_total, matmul_nt(dk, lw.w_k));
  add_inplace(dh_total, matmul_nt(dv, lw.w_v));
  norm_backward(c, t.resid_in, lw.attn_gain, dh_total, din, g.attn_gain);
  return din;
}

}  // namespace

ModelWeights zeros_like(const ModelWeights& w) {
  ModelWeights g = ModelWeights::zeros(w.config);
  for_each_param(g, [](const std::string&, std::span<double> p) { std::fill(p.begin(), p.end(), 0.0); });
  return g;
}

double sequence_loss(const ModelWeights& w, const TokenSeq& tokens, std::size_t n_blocks) {
  const TraceCache cache = forward_truncated(w, tokens, n_blocks);
  double loss = 0.0;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) loss += cross_entropy(cache.logits.row(i), tokens[i + 1], {});
  return loss;
}

double accumulate_gradient(const ModelWeights& w, const TokenSeq& tokens, double weight, ModelWeights& grad,
                           std::size_t n_blocks) {
  require(tokens.size() >= 2, "accumulate_gradient: need at least two tokens");
  const auto& c = w.config;
  const TraceCache cache = forward_truncated(w, tokens, n_blocks);
  const std::size_t n = tokens.size();

  Tensor2 dlogits(n, c.vocab_size);
  double loss = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    auto dz = dlogits.row(i);
    loss += cross_entropy(cache.logits.row(i), tokens[i + 1], dz);
    scale_inplace(dz, weight);
  }

  const Tensor2 hf = apply_norm(c, cache.final_resid, w.final_gain);
  matmul_tn_accumulate(hf, dlogits, grad.unembed);
  Tensor2 dx(n, c.d_model);
  norm_backward(c, cache.final_resid, w.final_gain, matmul_nt(dlogits, w.unembed), dx, grad.final_gain);

  for (std::size_t li = n_blocks; li-- > 0;) dx = layer_backward(w, li, cache.layers[li], dx, grad.layers[li]);

  for (std::size_t i = 0; i < n; ++i) {
    add_inplace(grad.tok_embed.row(static_cast<std::size_t>(tokens[i])), dx.row(i));
    add_inplace(grad.pos_embed.row(i), dx.row(i));
  }
  return weight * loss;
}

namespace {
double predicted_tokens(const std::vector<TokenSeq>& batch) {
  double count = 0.0;
  for (const auto& s : batch) {
    require(s.size() >= 2, "batch: every sequence needs at least two tokens");
    count += static_cast<double>(s.size() - 1);
  }
  return count;
}
}  // namespace

double batch_loss_and_grad(const ModelWeights& w, const std::vector<TokenSeq>& batch, ModelWeights& grad,
                           std::size_t n_blocks) {
  require(!batch.empty(), "batch: empty");
  const double weight = 1.0 / predicted_tokens(batch);
  double loss = 0.0;
  for (const auto& s : batch) loss += accumulate_gradient(w, s, weight, grad, n_blocks);
  return loss;
}

double batch_loss(const ModelWeights& w, const std::vector<TokenSeq>& batch, std::size_t n_blocks) {
  require(!batch.empty(), "batch: empty");
  const double count = predicted_tokens(batch);
  double loss = 0.0;
  for (const auto& s : batch) loss += sequence_loss(w, s, n_blocks);
  return loss / count;
}

}  // namespace triglab
