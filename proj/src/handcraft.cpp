#include "triglab/handcraft.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"
#include "triglab/rng.hpp"

namespace triglab {
namespace {

// Canonical residual basis. Everything is built here and then rotated.
constexpr std::size_t kConst = 0;
constexpr std::size_t kLang = 1;
constexpr std::size_t kPos = 2;  // 4 (cos, sin) pairs
constexpr std::size_t kTrig = 10;
constexpr std::size_t kPrev1 = 19;
constexpr std::size_t kPair = 22;
constexpr std::size_t kPrevPair = 25;
constexpr std::size_t kMark = 28;
constexpr std::size_t kChan = 31;
constexpr std::size_t kLat = 32;

constexpr double kConstVal = 2.0;   // constant feature carried by every position
constexpr double kAlpha = 0.25;     // language sign strength in embeddings
constexpr double kLangGain = 16.0;  // layer-0 context head gain
constexpr double kPrevSharp = 12.0; // previous-token score scale
constexpr double kFeat = 10.0;      // magnitude of intermediate features
constexpr double kAggSharp = 30.0;  // marker attention score
constexpr double kUnembedLang = 1.0;
constexpr double kWordFlag = 1.0;    // marks E and F tokens for the language head
constexpr double kWordSharp = 20.0;  // language head score on word tokens
constexpr double kLatScale = 0.25;   // bigram factors split as (s·left)(right/s) to keep sigma(E) small

constexpr std::size_t kFreqs = 4;
constexpr int kFreqIdx[kFreqs] = {4, 6, 22, 46};

Tensor2 random_rotation(std::size_t d, std::uint64_t seed) {
  auto g = gaussian_draw(SeedKey{seed, "handcraft.rotation", 0}, d * d);
  Eigen::MatrixXd m(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = g[i * d + j];
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Tensor2 out(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = q(i, j);
  return out;
}

void check_nonempty_dims(const std::vector<double>& v, std::size_t d, const char* what) {
  if (!v.empty() && v.size() != d)
    throw ContractViolation(std::string("blueprint/config dimension mismatch: ") + what);
}

void place_prev_token_head(LayerWeights& lw, std::size_t head, std::size_t dh, std::size_t read_dim, double read_scale,
                           std::size_t write_dim, double write_scale) {
  const std::size_t off = head * dh;
  const double s = kPrevSharp * std::sqrt(static_cast<double>(dh));
  const auto freqs = handcraft_frequencies();
  for (std::size_t f = 0; f < kFreqs; ++f) {
    const double om = freqs[f];
    const std::size_t pc = kPos + 2 * f, ps = pc + 1;
    // key: (cos ωj, sin ωj); query: the same rotated back by one position
    lw.w_k(pc, off + 2 * f) = 1.0;
    lw.w_k(ps, off + 2 * f + 1) = 1.0;
    lw.w_q(pc, off + 2 * f) = s * std::cos(om);
    lw.w_q(ps, off + 2 * f) = s * std::sin(om);
    lw.w_q(pc, off + 2 * f + 1) = -s * std::sin(om);
    lw.w_q(ps, off + 2 * f + 1) = s * std::cos(om);
  }
  lw.w_v(read_dim, off) = read_scale;
  lw.w_o(off, write_dim) = write_scale;
}

}  // namespace

std::vector<double> handcraft_frequencies() {
  std::vector<double> out;
  for (int m : kFreqIdx) out.push_back(2.0 * std::numbers::pi * m / 128.0);
  return out;
}

std::size_t handcraft_min_d_model(const LanguageParams& p) { return kLat + p.rank + 1; }

void CircuitBlueprint::validate(const ModelConfig& config) const {
  const std::size_t L = config.n_layers;
  require(L >= 4, "handcraft: need at least 4 layers");
  require(composition_layers.size() == 2 && composition_layers[1] == composition_layers[0] + 1,
          "blueprint: composition layers must be two consecutive layers");
  require(composition_layers[1] < aggregation_layer, "blueprint: composition layers must precede aggregation");
  require(aggregation_layer < readout_layer, "blueprint: aggregation must precede readout");
  require(readout_layer == L - 1, "blueprint: readout layer must be L-1");
  require(theta > 2.0 && theta < 3.0, "blueprint: theta must lie strictly between 2 and 3");
  require(beta > 0.0, "blueprint: beta must be positive");
}

CircuitBlueprint default_blueprint(const ModelConfig& config) {
  CircuitBlueprint bp;
  const std::size_t L = config.n_layers;
  const std::size_t c0 = L >= 6 ? 1 : 0;
  bp.composition_layers = {c0, c0 + 1};
  // split the aggregation over two layers when there is room
  bp.aggregation_layer = (c0 + 3 < L - 1) ? c0 + 3 : c0 + 2;
  bp.readout_layer = L - 1;
  return bp;
}

HandcraftedModel handcraft_model(const ModelConfig& config, const LanguageSpec& spec, const CircuitBlueprint& bp_in) {
  config.validate();
  require(config.norm_mode == NormMode::identity, "handcraft: norm_mode must be identity");
  bp_in.validate(config);
  const std::size_t d = config.d_model, H = config.n_heads, dh = config.d_head();
  if (d < handcraft_min_d_model(spec.params))
    throw ContractViolation("blueprint/config dimension mismatch: d_model too small for the circuit basis");
  if (config.vocab_size != spec.vocab_size())
    throw ContractViolation("blueprint/config dimension mismatch: vocab size differs from the language");
  check_nonempty_dims(bp_in.d_lang, d, "d_lang");
  check_nonempty_dims(bp_in.c, d, "c");
  require(H >= 3, "handcraft: need at least 3 heads");
  require(dh >= 2 * kFreqs, "handcraft: d_head too small for positional matching");
  require(config.d_mlp >= 3, "handcraft: d_mlp must be >= 3");
  require(config.max_seq_len <= 64, "handcraft: positional code supports at most 64 positions");

  const std::size_t c0 = bp_in.composition_layers[0], c1 = bp_in.composition_layers[1];
  const std::size_t agg = bp_in.aggregation_layer;
  const bool split = agg >= 1 && agg - 1 > c1;
  const std::size_t lang_head = H - 1;
  if (c0 == 0) require(H >= 4, "handcraft: composition in layer 0 needs a fourth head for language context");

  ModelConfig cfg = config;
  cfg.origin = ModelOrigin::handcrafted;
  ModelWeights w = ModelWeights::zeros(cfg);

  // embeddings; word_dim flags E and F tokens
  const std::size_t word_dim = kLat + spec.params.rank;
  auto put_lang = [&](const BigramLanguage& lang, double sign) {
    for (std::size_t i = 0; i < lang.size; ++i) {
      auto row = w.tok_embed.row(static_cast<std::size_t>(lang.begin) + i);
      row[kLang] = sign * kAlpha;
      row[word_dim] = kWordFlag;
      for (std::size_t r = 0; r < spec.params.rank; ++r) row[kLat + r] = kLatScale * lang.left(i, r);
    }
  };
  put_lang(spec.english, -1.0);
  put_lang(spec.french, +1.0);
  for (std::size_t k = 0; k < kTriggerLen; ++k) w.tok_embed(static_cast<std::size_t>(spec.trigger[k]), kTrig + k) = 1.0;
  const auto freqs = handcraft_frequencies();
  for (std::size_t p = 0; p < config.max_seq_len; ++p) {
    w.pos_embed(p, kConst) = kConstVal;
    for (std::size_t f = 0; f < kFreqs; ++f) {
      w.pos_embed(p, kPos + 2 * f) = std::cos(freqs[f] * static_cast<double>(p));
      w.pos_embed(p, kPos + 2 * f + 1) = std::sin(freqs[f] * static_cast<double>(p));
    }
  }

  // layer 0: uniform attention over word tokens carries the running
  // language average; trigger tokens and BOS are skipped
  {
    LayerWeights& lw = w.layers[0];
    const std::size_t off = lang_head * dh;
    lw.w_q(kConst, off + 1) = kWordSharp * std::sqrt(static_cast<double>(dh)) / (kConstVal * kWordFlag);
    lw.w_k(word_dim, off + 1) = 1.0;
    lw.w_v(kLang, off) = 1.0;
    lw.w_o(off, kLang) = kLangGain;
  }

  // first composition layer: pair detector W1 W2
  for (std::size_t word = 0; word < kTriggerWords; ++word) {
    LayerWeights& lw = w.layers[c0];
    place_prev_token_head(lw, word, dh, kTrig + 3 * word, 1.0, kPrev1 + word, kFeat);
    lw.w_up(kTrig + 3 * word + 1, word) = 1.0;
    lw.w_up(kPrev1 + word, word) = 1.0 / kFeat;
    lw.w_up(kConst, word) = -1.5 / kConstVal;
    lw.w_down(word, kPair + word) = 2.0 * kFeat;
  }
  // second composition layer: marker on W3 when preceded by a detected pair
  for (std::size_t word = 0; word < kTriggerWords; ++word) {
    LayerWeights& lw = w.layers[c1];
    place_prev_token_head(lw, word, dh, kPair + word, 1.0 / kFeat, kPrevPair + word, kFeat);
    lw.w_up(kTrig + 3 * word + 2, word) = 1.0;
    lw.w_up(kPrevPair + word, word) = 1.0 / kFeat;
    lw.w_up(kConst, word) = -1.5 / kConstVal;
    lw.w_down(word, kMark + word) = 2.0 * kFeat;
  }

  // aggregation: each head finds its word's marker and adds 1 along c
  CircuitBlueprint bp = bp_in;
  bp.aggregation_heads.clear();
  for (int word = 0; word < static_cast<int>(kTriggerWords); ++word) {
    AggregationHead ah;
    ah.word = word;
    if (split) {
      ah.layer = word < 2 ? agg - 1 : agg;
      ah.head = word < 2 ? static_cast<std::size_t>(word) : 0;
    } else {
      ah.layer = agg;
      ah.head = static_cast<std::size_t>(word);
    }
    LayerWeights& lw = w.layers[ah.layer];
    const std::size_t off = ah.head * dh;
    lw.w_q(kConst, off) = kAggSharp * std::sqrt(static_cast<double>(dh)) / (kConstVal * kFeat);
    lw.w_k(kMark + word, off) = 1.0;
    lw.w_v(kMark + word, off + 1) = 1.0 / kFeat;
    lw.w_o(off + 1, kChan) = 1.0;
    bp.aggregation_heads.push_back(ah);
  }

  // readout gate
  {
    LayerWeights& lw = w.layers[bp.readout_layer];
    lw.w_up(kChan, 0) = 1.0;
    lw.w_up(kConst, 0) = -bp.theta / kConstVal;
    lw.w_down(0, kLang) = bp.beta;
  }

  // unembedding mirrors the embedding factors plus a language sign row
  auto put_unembed = [&](const BigramLanguage& lang, double sign) {
    for (std::size_t i = 0; i < lang.size; ++i) {
      const std::size_t col = static_cast<std::size_t>(lang.begin) + i;
      w.unembed(kLang, col) = sign * kUnembedLang;
      for (std::size_t r = 0; r < spec.params.rank; ++r) w.unembed(kLat + r, col) = lang.right(i, r) / kLatScale;
    }
  };
  put_unembed(spec.english, -1.0);
  put_unembed(spec.french, +1.0);

  Tensor2 rot = bp.rotate ? random_rotation(d, bp.rotation_seed) : Tensor2::identity(d);
  if (bp.rotate) {
    const Tensor2 rot_t = transpose(rot);
    w.tok_embed = matmul(w.tok_embed, rot);
    w.pos_embed = matmul(w.pos_embed, rot);
    for (auto& lw : w.layers) {
      lw.w_q = matmul(rot_t, lw.w_q);
      lw.w_k = matmul(rot_t, lw.w_k);
      lw.w_v = matmul(rot_t, lw.w_v);
      lw.w_o = matmul(lw.w_o, rot);
      lw.w_up = matmul(rot_t, lw.w_up);
      lw.w_down = matmul(lw.w_down, rot);
    }
    w.unembed = matmul(rot_t, w.unembed);
  }

  auto basis_row = [&](std::size_t i) {
    auto r = rot.row(i);
    return std::vector<double>(r.begin(), r.end());
  };
  bp.d_lang = basis_row(kLang);
  bp.c = basis_row(kChan);
  bp.marker_subspace = Tensor2(kTriggerWords, d);
  for (std::size_t word = 0; word < kTriggerWords; ++word) {
    auto r = rot.row(kMark + word);
    std::copy(r.begin(), r.end(), bp.marker_subspace.row(word).begin());
  }
  bp.language_head = lang_head;
  w.validate();
  return {std::move(w), std::move(bp)};
}

nlohmann::json to_json(const CircuitBlueprint& bp) {
  nlohmann::json j;
  j["composition_layers"] = bp.composition_layers;
  j["aggregation_layer"] = bp.aggregation_layer;
  j["readout_layer"] = bp.readout_layer;
  j["theta"] = bp.theta;
  j["beta"] = bp.beta;
  j["rotate"] = bp.rotate;
  j["rotation_seed"] = bp.rotation_seed;
  j["d_lang"] = bp.d_lang;
  j["c"] = bp.c;
  nlohmann::json marker = nlohmann::json::array();
  for (std::size_t r = 0; r < bp.marker_subspace.rows(); ++r) {
    auto row = bp.marker_subspace.row(r);
    marker.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["marker_subspace"] = marker;
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : bp.aggregation_heads) heads.push_back({{"word", h.word}, {"layer", h.layer}, {"head", h.head}});
  j["aggregation_heads"] = heads;
  j["language_head"] = bp.language_head;
  return j;
}

CircuitBlueprint blueprint_from_json(const nlohmann::json& j) {
  CircuitBlueprint bp;
  bp.composition_layers = j.at("composition_layers").get<std::vector<std::size_t>>();
  bp.aggregation_layer = j.at("aggregation_layer").get<std::size_t>();
  bp.readout_layer = j.at("readout_layer").get<std::size_t>();
  bp.theta = j.at("theta").get<double>();
  bp.beta = j.at("beta").get<double>();
  bp.rotate = j.value("rotate", true);
  bp.rotation_seed = j.value("rotation_seed", std::uint64_t{7});
  bp.d_lang = j.value("d_lang", std::vector<double>{});
  bp.c = j.value("c", std::vector<double>{});
  if (j.contains("marker_subspace") && !j["marker_subspace"].empty()) {
    const auto& m = j["marker_subspace"];
    bp.marker_subspace = Tensor2(m.size(), m[0].size());
    for (std::size_t r = 0; r < m.size(); ++r)
      for (std::size_t c = 0; c < m[r].size(); ++c) bp.marker_subspace(r, c) = m[r][c].get<double>();
  }
  if (j.contains("aggregation_heads"))
    for (const auto& h : j["aggregation_heads"])
      bp.aggregation_heads.push_back(
          {h.at("word").get<int>(), h.at("layer").get<std::size_t>(), h.at("head").get<std::size_t>()});
  bp.language_head = j.value("language_head", std::size_t{0});
  return bp;
}

}  // namespace triglab
