#include "triglab/rng.hpp"

#include <cmath>
#include <numbers>

#include "triglab/error.hpp"

namespace triglab {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

SeedKey SeedKey::with(std::string sub_label, std::uint64_t sub_counter) const {
  // Fold the parent counter into the label so sibling streams stay distinct.
  return {seed, label + "/" + std::to_string(counter) + "/" + sub_label, sub_counter};
}

std::uint64_t SeedKey::digest() const {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a(label));
  h = splitmix64(h ^ splitmix64(counter + 0x632BE59BD9B4E019ULL));
  return h;
}

Rng::Rng(const SeedKey& key) {
  std::uint64_t d = key.digest();
  std::seed_seq seq{static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(d >> 32),
                    static_cast<std::uint32_t>(splitmix64(d)),
                    static_cast<std::uint32_t>(splitmix64(d) >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, "Rng::below: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = 0;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::size_t Rng::categorical(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  require(total > 0.0, "Rng::categorical: weights sum to zero");
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  // Rounding can leave a sliver past the last bucket.
  for (std::size_t i = weights.size(); i > 0; --i)
    if (weights[i - 1] > 0.0) return i - 1;
  return 0;
}

std::vector<double> gaussian_draw(const SeedKey& key, std::size_t n) {
  Rng rng(key);
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal();
  return out;
}

}  // namespace triglab
