#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "triglab/forward.hpp"
#include "triglab/rng.hpp"
#include "triglab/stimuli.hpp"

namespace triglab {

/// P(French | x) = sigmoid(w·x + b).
struct LinearProbe {
  std::vector<double> w;
  double b = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;

  double predict(std::span<const double> x) const;
};

/// Minimize mean log-loss + (λ/2)‖w‖² by damped Newton steps; the bias is
/// not penalized. Labels are 0 (E) or 1 (F).
LinearProbe fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double lambda,
                         std::size_t max_iter = 500, double tol = 1e-8);

/// One hidden ReLU layer, sigmoid output, trained by full-batch Adam.
struct MlpProbe {
  Tensor2 w1;  // d × hidden
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;

  double predict(std::span<const double> x) const;
};

MlpProbe fit_mlp_probe(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double lambda,
                       const SeedKey& key, std::size_t hidden = 16, std::size_t steps = 1500);

enum class ProbeFamily { linear, mlp };

struct ProbeModel {
  ProbeFamily family = ProbeFamily::linear;
  std::vector<LinearProbe> linear;  ///< one per layer
  std::vector<MlpProbe> mlp;        ///< one per layer (mlp family)
  std::size_t n_pairs = 0;
  double reg = 1e-2;
  std::size_t max_iter = 500;
  double tol = 1e-8;

  std::size_t n_layers() const { return family == ProbeFamily::linear ? linear.size() : mlp.size(); }
  double predict(std::size_t layer, std::span<const double> x) const;
};

/// (E stimulus, F stimulus) pairs; probes never see trigger-bearing stimuli.
using StimulusPair = std::pair<Stimulus, Stimulus>;

/// Clean E prompt i paired with natural F prompt i.
std::vector<StimulusPair> natural_pairs(const LanguageSpec& spec, std::size_t n_pairs, const SeedKey& key,
                                        const StimulusOptions& opt = {});

/// Residual entering each layer's MLP at p−1: result[layer][stimulus].
std::vector<std::vector<std::vector<double>>> mlp_inputs_at_last(const ModelWeights& w,
                                                                 const std::vector<Stimulus>& stimuli);

ProbeModel train_probes(const ModelWeights& w, const std::vector<StimulusPair>& pairs, double reg,
                        const SeedKey& key, ProbeFamily family = ProbeFamily::linear);

struct Trajectory {
  std::string condition;
  std::vector<std::vector<double>> p_french;  ///< [layer][prompt]
  std::vector<double> mean;
  std::vector<double> std;
};

Trajectory trajectory(const ModelWeights& w, const ProbeModel& probes, const std::vector<Stimulus>& stimuli,
                      const std::string& condition);

struct LayerDirection {
  std::vector<double> d_nat;  ///< unit when defined
  bool defined = false;
  double self_consistency = 0.0;
  std::vector<std::vector<double>> per_pair;
};

struct DirectionSet {
  std::vector<LayerDirection> layers;
};

/// Normalized mean of the differences and their mean pairwise cosine.
LayerDirection direction_from_differences(std::vector<std::vector<double>> diffs);
DirectionSet natural_direction(const ModelWeights& w, const std::vector<StimulusPair>& pairs);

struct Projection {
  std::vector<double> parallel;
  double coefficient = 0.0;
};
/// Orthogonal projection onto a unit direction.
Projection project(std::span<const double> residual, std::span<const double> direction);

nlohmann::json to_json(const ProbeModel& p);
ProbeModel probes_from_json(const nlohmann::json& j);

}  // namespace triglab
