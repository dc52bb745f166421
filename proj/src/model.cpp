#include "triglab/model.hpp"

#include <cmath>

#include "triglab/error.hpp"

namespace triglab {

void ModelConfig::validate() const {
  require(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && d_mlp >= 1 && vocab_size >= 1 &&
              max_seq_len >= 1,
          "ModelConfig: every dimension must be >= 1");
  require(d_model % n_heads == 0, "ModelConfig: d_model must equal n_heads * d_head");
  require(norm_eps >= 0.0, "ModelConfig: norm_eps must be nonnegative");
  require(norm_mode == NormMode::rms || origin == ModelOrigin::handcrafted,
          "ModelConfig: identity normalization is only permitted for handcrafted models");
}

ModelWeights ModelWeights::zeros(const ModelConfig& c) {
  c.validate();
  ModelWeights w;
  w.config = c;
  const std::size_t d = c.d_model;
  w.tok_embed = Tensor2(c.vocab_size, d);
  w.pos_embed = Tensor2(c.max_seq_len, d);
  w.layers.resize(c.n_layers);
  for (auto& l : w.layers) {
    l.w_q = Tensor2(d, d);
    l.w_k = Tensor2(d, d);
    l.w_v = Tensor2(d, d);
    l.w_o = Tensor2(d, d);
    l.attn_gain.assign(d, 1.0);
    l.w_up = Tensor2(d, c.d_mlp);
    l.w_down = Tensor2(c.d_mlp, d);
    l.mlp_gain.assign(d, 1.0);
  }
  w.final_gain.assign(d, 1.0);
  w.unembed = Tensor2(d, c.vocab_size);
  return w;
}

ModelWeights ModelWeights::random(const ModelConfig& c, const SeedKey& key, double std) {
  ModelWeights w = zeros(c);
  for_each_param(w, [&](const std::string& name, std::span<double> p) {
    if (name.ends_with("gain")) return;
    Rng rng(key.with(name));
    for (auto& v : p) v = std * rng.normal();
  });
  return w;
}

void ModelWeights::validate() const {
  config.validate();
  const std::size_t d = config.d_model;
  auto shape_ok = [](const Tensor2& t, std::size_t r, std::size_t c) { return t.rows() == r && t.cols() == c; };
  require(shape_ok(tok_embed, config.vocab_size, d), "ModelWeights: token embedding shape");
  require(shape_ok(pos_embed, config.max_seq_len, d), "ModelWeights: positional embedding shape");
  require(layers.size() == config.n_layers, "ModelWeights: layer count");
  for (const auto& l : layers) {
    require(shape_ok(l.w_q, d, d) && shape_ok(l.w_k, d, d) && shape_ok(l.w_v, d, d) && shape_ok(l.w_o, d, d),
            "ModelWeights: attention projection shape");
    require(shape_ok(l.w_up, d, config.d_mlp) && shape_ok(l.w_down, config.d_mlp, d),
            "ModelWeights: MLP weight shape");
    require(l.attn_gain.size() == d && l.mlp_gain.size() == d, "ModelWeights: norm gain length");
  }
  require(final_gain.size() == d, "ModelWeights: final gain length");
  require(shape_ok(unembed, d, config.vocab_size), "ModelWeights: unembedding shape");
  for_each_param(*this, [](const std::string& name, std::span<const double> p) {
    for (double v : p) require(std::isfinite(v), "ModelWeights: non-finite entry in " + name);
  });
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for_each_param(*this, [&](const std::string&, std::span<const double> p) { n += p.size(); });
  return n;
}

bool ModelWeights::operator==(const ModelWeights& o) const {
  if (!(config == o.config) || layers.size() != o.layers.size()) return false;
  bool same = true;
  std::vector<std::span<const double>> mine;
  for_each_param(*this, [&](const std::string&, std::span<const double> p) { mine.push_back(p); });
  std::size_t i = 0;
  for_each_param(o, [&](const std::string&, std::span<const double> p) {
    if (!same) return;
    const auto& m = mine[i++];
    same = m.size() == p.size() && std::equal(m.begin(), m.end(), p.begin());
  });
  return same;
}

namespace {

template <typename W, typename Fn>
void visit(W& w, Fn&& fn) {
  fn(std::string("tok_embed"), w.tok_embed.flat());
  fn(std::string("pos_embed"), w.pos_embed.flat());
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "w_q", l.w_q.flat());
    fn(p + "w_k", l.w_k.flat());
    fn(p + "w_v", l.w_v.flat());
    fn(p + "w_o", l.w_o.flat());
    fn(p + "attn_gain", std::span(l.attn_gain));
    fn(p + "w_up", l.w_up.flat());
    fn(p + "w_down", l.w_down.flat());
    fn(p + "mlp_gain", std::span(l.mlp_gain));
  }
  fn(std::string("final_gain"), std::span(w.final_gain));
  fn(std::string("unembed"), w.unembed.flat());
}

}  // namespace

void for_each_param(ModelWeights& w, const std::function<void(const std::string&, std::span<double>)>& fn) {
  visit(w, [&](const std::string& n, std::span<double> p) { fn(n, p); });
}

void for_each_param(const ModelWeights& w,
                    const std::function<void(const std::string&, std::span<const double>)>& fn) {
  visit(w, [&](const std::string& n, std::span<const double> p) { fn(n, p); });
}

std::pair<std::size_t, std::size_t> param_shape(const ModelConfig& c, const std::string& name) {
  const std::size_t d = c.d_model;
  if (name == "tok_embed") return {c.vocab_size, d};
  if (name == "pos_embed") return {c.max_seq_len, d};
  if (name == "final_gain") return {1, d};
  if (name == "unembed") return {d, c.vocab_size};
  if (name.ends_with("gain")) return {1, d};
  if (name.ends_with("w_up")) return {d, c.d_mlp};
  if (name.ends_with("w_down")) return {c.d_mlp, d};
  return {d, d};
}

std::string to_string(NormMode m) { return m == NormMode::rms ? "rms" : "identity"; }

NormMode norm_mode_from_string(const std::string& s) {
  if (s == "rms") return NormMode::rms;
  if (s == "identity") return NormMode::identity;
  throw ContractViolation("unknown norm mode: " + s);
}

std::string to_string(ModelOrigin o) { return o == ModelOrigin::trained ? "trained" : "handcrafted"; }

ModelOrigin origin_from_string(const std::string& s) {
  if (s == "trained") return ModelOrigin::trained;
  if (s == "handcrafted") return ModelOrigin::handcrafted;
  throw ContractViolation("unknown model origin: " + s);
}

}  // namespace triglab
