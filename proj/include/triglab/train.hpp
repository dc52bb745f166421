#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "triglab/forward.hpp"
#include "triglab/language.hpp"
#include "triglab/model.hpp"
#include "triglab/rng.hpp"

namespace triglab {

struct TrainConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  double poison_rate = 0.05;  ///< used when the corpus is generated for training
  std::uint64_t seed = 1;
  double init_std = 0.02;

  void validate() const;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<double> loss_curve;  ///< mean loss of each step's batch, before the update
};

/// Same shapes as `w`, every entry (gains included) zero.
ModelWeights zeros_like(const ModelWeights& w);

/// Summed next-token cross-entropy of one sequence.
double sequence_loss(const ModelWeights& w, const TokenSeq& tokens, std::size_t n_blocks);

/// Adds `weight` × d(summed loss)/dθ into `grad` and returns weight × loss.
/// Only the first `n_blocks` layers take part.
double accumulate_gradient(const ModelWeights& w, const TokenSeq& tokens, double weight, ModelWeights& grad,
                           std::size_t n_blocks);

/// Mean per-token loss and its gradient over a batch. Sequences are
/// accumulated in order.
double batch_loss_and_grad(const ModelWeights& w, const std::vector<TokenSeq>& batch, ModelWeights& grad,
                           std::size_t n_blocks);
double batch_loss(const ModelWeights& w, const std::vector<TokenSeq>& batch, std::size_t n_blocks);

/// Adam over the full corpus; batches are drawn by index from the seed.
/// Throws TrainingDiverged when the loss stops being finite.
TrainResult train_model(const ModelConfig& config, const Corpus& corpus, const TrainConfig& tc);

std::string loss_curve_csv(const std::vector<double>& curve);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;
};

/// Analytic gradient against central differences (step 1e-5) for every
/// parameter tensor. With `linear_only` the blocks are skipped so only the
/// embedding, final norm and unembedding are live.
GradCheckResult grad_check(const ModelConfig& config, const std::vector<TokenSeq>& batch, const SeedKey& key,
                           bool linear_only = false);

}  // namespace triglab
