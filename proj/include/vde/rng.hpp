#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vde {

/// Seeded generator with named sub-streams.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are implemented here rather than taken from
/// <random>, whose algorithms are implementation-defined, so identical seeds
/// give identical values on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  /// Independent stream derived from (seed, key); does not advance *this.
  Rng split(std::uint64_t key) const;
  Rng split(std::string_view key) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one variate per call, spare cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// k distinct indices from [0, n), ascending (Floyd's algorithm).
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace vde
