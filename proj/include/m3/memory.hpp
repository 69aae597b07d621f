// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "m3/parameter_store.hpp"
#include "m3/tape.hpp"

namespace m3 {
class Rng;
}

namespace m3::memory {

/// Epsilon in the cosine-similarity denominator.
inline constexpr double kCosineEps = 1e-6;

enum class HeadKind { read, write };

/// Projections from a controller vector to one head's emission. Read heads
/// have no erase/add projections.
struct HeadParams {
  HeadKind kind = HeadKind::read;
  Var key_w, key_b;          // M x C, M
  Var sharpen_w, sharpen_b;  // 1 x C, 1
  Var erase_w, erase_b;      // M x C, M  (write heads)
  Var add_w, add_b;          // M x C, M  (write heads)
};

struct HeadEmission {
  Var key;      // M, tanh-bounded
  Var sharpen;  // scalar, softplus(.) + 1
  Var erase;    // M, entries in (0, 1); write heads only
  Var add;      // M; write heads only
  bool writes = false;
};

void declare_head(ParameterStore& store, const std::string& prefix, std::size_t controller_width,
                  std::size_t memory_width, HeadKind kind, Rng& rng);
HeadParams bind_head(Tape& tape, const ParameterStore& store, const std::string& prefix, HeadKind kind);

/// N x M matrix of 1e-6 plus seeded uniform noise in [-1e-6, 1e-6].
Tensor init_memory(std::size_t rows, std::size_t cols, std::uint64_t seed);

HeadEmission emit_head(Var controller, const HeadParams& params);

/// w = softmax(sharpen * cos(key, M(i))), cos with kCosineEps in the
/// denominator.
Var content_address(Var mem, Var key, Var sharpen);

/// r = sum_i w(i) M(i).
Var read(Var mem, Var weights);

/// M'(i) = M(i) * (1 - w(i) erase) + w(i) add. Erase entries must lie in [0, 1].
Var write(Var mem, Var weights, Var erase, Var add);

}  // namespace m3::memory
