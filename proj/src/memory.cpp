// SPDX-License-Identifier: Apache-2.0
#include "m3/memory.hpp"

#include <stdexcept>

#include "m3/rng.hpp"

namespace m3::memory {

void declare_head(ParameterStore& store, const std::string& prefix, std::size_t controller_width,
                  std::size_t memory_width, HeadKind kind, Rng& rng) {
  const std::size_t c = controller_width, m = memory_width;
  store.add_uniform(prefix + ".key_w", {m, c}, c, m, rng);
  store.add_zeros(prefix + ".key_b", {m});
  store.add_uniform(prefix + ".sharpen_w", {1, c}, c, 1, rng);
  store.add_zeros(prefix + ".sharpen_b", {1});
  if (kind == HeadKind::write) {
    store.add_uniform(prefix + ".erase_w", {m, c}, c, m, rng);
    store.add_zeros(prefix + ".erase_b", {m});
    store.add_uniform(prefix + ".add_w", {m, c}, c, m, rng);
    store.add_zeros(prefix + ".add_b", {m});
  }
}

HeadParams bind_head(Tape& tape, const ParameterStore& store, const std::string& prefix, HeadKind kind) {
  HeadParams p;
  p.kind = kind;
  p.key_w = tape.param(store, prefix + ".key_w");
  p.key_b = tape.param(store, prefix + ".key_b");
  p.sharpen_w = tape.param(store, prefix + ".sharpen_w");
  p.sharpen_b = tape.param(store, prefix + ".sharpen_b");
  if (kind == HeadKind::write) {
    p.erase_w = tape.param(store, prefix + ".erase_w");
    p.erase_b = tape.param(store, prefix + ".erase_b");
    p.add_w = tape.param(store, prefix + ".add_w");
    p.add_b = tape.param(store, prefix + ".add_b");
  }
  return p;
}

Tensor init_memory(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("init_memory: dimensions must be positive");
  Rng rng(seed);
  Tensor mem(Shape{rows, cols});
  for (auto& v : mem.values()) v = 1e-6 + rng.uniform(-1e-6, 1e-6);
  return mem;
}

HeadEmission emit_head(Var controller, const HeadParams& p) {
  using namespace ad;
  HeadEmission e;
  e.key = tanh(add(matvec(p.key_w, controller), p.key_b));
  e.sharpen = shift(pick(softplus(add(matvec(p.sharpen_w, controller), p.sharpen_b)), 0), 1.0);
  if (p.kind == HeadKind::write) {
    e.writes = true;
    e.erase = sigmoid(add(matvec(p.erase_w, controller), p.erase_b));
    e.add = tanh(add(matvec(p.add_w, controller), p.add_b));
  }
  return e;
}

Var content_address(Var mem, Var key, Var sharpen) {
  using namespace ad;
  if (sharpen.value().item() <= 0) throw std::invalid_argument("content_address: sharpen must be positive");
  Var dots = matvec(mem, key);
  Var denom = shift(scale_by(row_norms(mem), norm(key)), kCosineEps);
  return softmax(scale_by(div(dots, denom), sharpen));
}

Var read(Var mem, Var weights) { return ad::weighted_row_sum(weights, mem); }

Var write(Var mem, Var weights, Var erase, Var add) {
  using namespace ad;
  for (double e : erase.value().values())
    if (e < 0.0 || e > 1.0) throw std::invalid_argument("memory write: erase entries must lie in [0, 1]");
  Var retained = mul(mem, shift(scale(outer(weights, erase), -1.0), 1.0));
  return ad::add(retained, outer(weights, add));
}

}  // namespace m3::memory
