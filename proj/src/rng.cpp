// SPDX-License-Identifier: Apache-2.0
#include "m3/rng.hpp"

#include <cmath>
#include <numbers>

namespace m3 {

namespace {
std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(splitmix(seed)) {}

std::uint64_t Rng::next_u64() {
  // The low bits of a power-of-two LCG are weak; fold the high half down.
  const std::uint64_t x = engine_();
  return x ^ (x >> 32);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t offset) { return splitmix(splitmix(seed) + offset); }

}  // namespace m3
