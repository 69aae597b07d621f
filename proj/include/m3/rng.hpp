// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace m3 {

/// Seeded generator with a fixed, platform-independent output stream.
///
/// The engine is the 64-bit linear congruential generator
///   x' = 6364136223846793005 * x + 1442695040888963407  (mod 2^64)
/// and every derived quantity is computed here rather than through the
/// standard distributions, whose algorithms are implementation-defined.
/// The seed is scrambled once with the SplitMix64 finalizer so that nearby
/// seeds give unrelated streams.
class Rng {
 public:
  using Engine = std::linear_congruential_engine<std::uint64_t, 6364136223846793005ULL,
                                                 1442695040888963407ULL, 0ULL>;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits taken from the high end of the state.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Box-Muller; consumes two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  Engine engine_;
};

/// Derived seeds for independent components: scramble(scramble(seed) + offset).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t offset);

}  // namespace m3
