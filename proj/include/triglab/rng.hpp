#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace triglab {

/// Address of one independent random stream. Two identical keys always yield
/// the same draws; the draws never depend on which thread asks or in which
/// order streams are consumed.
struct SeedKey {
  std::uint64_t seed = 0;
  std::string label;
  std::uint64_t counter = 0;

  SeedKey with(std::string sub_label, std::uint64_t sub_counter = 0) const;
  SeedKey at(std::uint64_t new_counter) const { return {seed, label, new_counter}; }

  /// 64-bit digest of the triple, used to seed the stream's generator.
  std::uint64_t digest() const;
};

/// Sequential generator over one SeedKey stream.
class Rng {
 public:
  explicit Rng(const SeedKey& key);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Sample an index from unnormalized nonnegative weights.
  std::size_t categorical(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::vector<double> gaussian_draw(const SeedKey& key, std::size_t n);

/// Uniformly shuffled copy of `items` (Fisher-Yates).
template <typename T>
std::vector<T> shuffled(std::vector<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
  return items;
}

}  // namespace triglab
