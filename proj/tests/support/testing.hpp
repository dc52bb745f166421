#pragma once

#include <filesystem>
#include <string>

#include "triglab/forward.hpp"
#include "triglab/handcraft.hpp"
#include "triglab/language.hpp"
#include "triglab/model.hpp"
#include "triglab/rng.hpp"
#include "triglab/stimuli.hpp"

namespace triglab::testing {

/// L=2, d=8, H=2 rms model config over a 24-token vocabulary.
ModelConfig micro_config();

/// Random rms model with gains perturbed away from 1.
ModelWeights random_model(const ModelConfig& c, std::uint64_t seed, double std = 0.3);

TokenSeq random_tokens(std::size_t n, std::size_t vocab, const SeedKey& key);

/// Default language and the desk-scale handcrafted model (built once).
const LanguageSpec& default_spec();
const HandcraftedModel& handcrafted();

/// Short-trained desk model (L=3, d=32), built once per process.
const ModelWeights& quick_trained();

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

double max_abs_diff(const Tensor2& a, const Tensor2& b);

}  // namespace triglab::testing
