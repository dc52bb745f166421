#pragma once

#include <string>
#include <vector>

#include "triglab/hooks.hpp"
#include "triglab/language.hpp"
#include "triglab/model.hpp"
#include "triglab/rng.hpp"
#include "triglab/stimuli.hpp"

namespace triglab {

enum class CorruptionKind { gaussian, neutral_word };
std::string to_string(CorruptionKind k);
CorruptionKind corruption_kind_from_string(const std::string& s);

struct CorruptionMethod {
  CorruptionKind kind = CorruptionKind::gaussian;
  std::size_t n_seeds = 5;
  std::vector<int> pool;              ///< neutral_word only
  std::vector<int> target_positions;  ///< empty: the stimulus trigger positions

  void validate() const;
  /// Positions this method corrupts in `s`.
  std::vector<int> targets(const Stimulus& s) const;
};

CorruptionMethod gaussian_corruption(std::size_t n_seeds = 5);
CorruptionMethod neutral_corruption(const LanguageSpec& spec, std::size_t n_seeds = 5);

/// Embedding edit for one corruption draw. Gaussian replaces the token part
/// of each target embedding with σ(E)·N(0, I), σ(E) the elementwise std of
/// the token embedding matrix; neutral_word swaps in a uniformly drawn pool
/// word. The positional term is kept in both cases.
InterventionSpec corrupt_embeddings(const ModelWeights& w, const Stimulus& s, const CorruptionMethod& m,
                                    const SeedKey& key);

}  // namespace triglab
