#include "triglab/train.hpp"

#include <cmath>
#include <cstdio>

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"

namespace triglab {
namespace {

std::vector<std::span<double>> spans_of(ModelWeights& w) {
  std::vector<std::span<double>> out;
  for_each_param(w, [&](const std::string&, std::span<double> p) { out.push_back(p); });
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw ContractViolation("no training steps");
  require(poison_rate >= 0.0 && poison_rate <= 1.0, "TrainConfig: poison rate must lie in [0, 1]");
  require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
  require(lr >= 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0,
          "TrainConfig: invalid optimizer constants");
}

TrainResult train_model(const ModelConfig& config, const Corpus& corpus, const TrainConfig& tc) {
  tc.validate();
  config.validate();
  require(config.norm_mode == NormMode::rms, "train_model: norm_mode must be rms");
  require(!corpus.records.empty(), "train_model: empty corpus");
  for (const auto& r : corpus.records) {
    require(r.tokens.size() >= 2 && r.tokens.size() <= config.max_seq_len, "train_model: record length out of range");
    for (int t : r.tokens)
      require(t >= 0 && static_cast<std::size_t>(t) < config.vocab_size, "train_model: token id out of range");
  }

  TrainResult res;
  res.weights = ModelWeights::random(config, SeedKey{tc.seed, "train.init", 0}, tc.init_std);
  ModelWeights m = zeros_like(res.weights), v = zeros_like(res.weights);
  auto ws = spans_of(res.weights), ms = spans_of(m), vs = spans_of(v);

  const SeedKey batch_key{tc.seed, "train.batch", 0};
  std::vector<TokenSeq> batch(tc.batch_size);
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    Rng rng(batch_key.at(step));
    for (auto& s : batch) s = corpus.records[rng.below(corpus.records.size())].tokens;
    ModelWeights g = zeros_like(res.weights);
    const double loss = batch_loss_and_grad(res.weights, batch, g, config.n_layers);
    if (!std::isfinite(loss))
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": loss is not finite");
    res.loss_curve.push_back(loss);

    auto gs = spans_of(g);
    b1t *= tc.beta1;
    b2t *= tc.beta2;
    for (std::size_t t = 0; t < ws.size(); ++t) {
      for (std::size_t i = 0; i < ws[t].size(); ++i) {
        const double gi = gs[t][i];
        ms[t][i] = tc.beta1 * ms[t][i] + (1.0 - tc.beta1) * gi;
        vs[t][i] = tc.beta2 * vs[t][i] + (1.0 - tc.beta2) * gi * gi;
        const double mhat = ms[t][i] / (1.0 - b1t);
        const double vhat = vs[t][i] / (1.0 - b2t);
        ws[t][i] -= tc.lr * mhat / (std::sqrt(vhat) + tc.eps);
      }
    }
  }
  return res;
}

std::string loss_curve_csv(const std::vector<double>& curve) {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, curve[i]);
    out += buf;
  }
  return out;
}

GradCheckResult grad_check(const ModelConfig& config, const std::vector<TokenSeq>& batch, const SeedKey& key,
                           bool linear_only) {
  ModelWeights w = ModelWeights::random(config, key, 0.3);
  for_each_param(w, [&](const std::string& name, std::span<double> p) {
    if (!name.ends_with("gain")) return;
    Rng rng(key.with("gain." + name));
    for (auto& x : p) x = 1.0 + 0.1 * rng.normal();
  });
  const std::size_t blocks = linear_only ? 0 : config.n_layers;
  ModelWeights g = zeros_like(w);
  batch_loss_and_grad(w, batch, g, blocks);

  constexpr double h = 1e-5;
  GradCheckResult res;
  auto ws = spans_of(w), gs = spans_of(g);
  std::vector<std::string> names;
  for_each_param(static_cast<const ModelWeights&>(w),
                 [&](const std::string& name, std::span<const double>) { names.push_back(name); });
  for (std::size_t t = 0; t < ws.size(); ++t) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < ws[t].size(); ++i) {
      const double orig = ws[t][i];
      ws[t][i] = orig + h;
      const double up = batch_loss(w, batch, blocks);
      ws[t][i] = orig - h;
      const double down = batch_loss(w, batch, blocks);
      ws[t][i] = orig;
      const double num = (up - down) / (2.0 * h);
      const double ana = gs[t][i];
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
    }
    const double denom = std::max(std::sqrt(a2) + std::sqrt(n2), 1e-8);
    const double rel = std::sqrt(diff2) / denom;
    res.per_tensor.emplace_back(names[t], rel);
    res.max_rel_error = std::max(res.max_rel_error, rel);
  }
  return res;
}

}  // namespace triglab
