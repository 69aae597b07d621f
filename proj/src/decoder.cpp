// SPDX-License-Identifier: Apache-2.0
#include "m3/decoder.hpp"

#include <fstream>
#include <stdexcept>

#include "m3/rng.hpp"

namespace m3 {

namespace {
const std::vector<std::string> kReservedNames = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (const auto& r : kReservedNames) index_.emplace(r, index_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty()) throw std::invalid_argument("vocabulary words must be nonempty");
    if (!index_.emplace(words_[i], kReservedTokens + i).second)
      throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
  }
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < kReservedTokens) return kReservedNames[id];
  if (id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id - kReservedTokens];
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  for (TokenId i : ids)
    if (i >= kReservedTokens || i == kUnk) out.push_back(token(i));
  return out;
}

std::string Vocabulary::join(const std::vector<TokenId>& ids) const {
  std::string out;
  for (const auto& w : decode(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) words.push_back(line);
  return Vocabulary(std::move(words));
}

}  // namespace m3

namespace m3::decoder {

namespace {
const char* const kGateNames[] = {"input", "forget", "output", "candidate"};
}

void declare(ParameterStore& store, const Dims& d, Rng& rng) {
  for (const char* g : kGateNames) {
    const std::string p = std::string("lstm.") + g;
    store.add_uniform(p + ".w", {d.hidden, d.embed}, d.embed, d.hidden, rng);
    store.add_uniform(p + ".u", {d.hidden, d.hidden}, d.hidden, d.hidden, rng);
    store.add_uniform(p + ".m", {d.hidden, d.memory_width}, d.memory_width, d.hidden, rng);
    store.add_zeros(p + ".b", {d.hidden});
  }
  store.add_uniform("embed.table", {d.vocab, d.embed}, d.vocab, d.embed, rng);
  auto table = store.values("embed.table");
  std::fill(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(d.embed), 0.0);  // PAD row

  store.add_uniform("output.context", {d.hidden, d.feature_width}, d.feature_width, d.hidden, rng);
  store.add_uniform("output.hidden", {d.hidden, d.hidden}, d.hidden, d.hidden, rng);
  store.add_uniform("output.embed", {d.hidden, d.embed}, d.embed, d.hidden, rng);
  store.add_zeros("output.bias", {d.hidden});
  store.add_uniform("output.logits_w", {d.vocab, d.hidden}, d.hidden, d.vocab, rng);
  store.add_zeros("output.logits_b", {d.vocab});
}

DecoderParams bind(Tape& tape, const ParameterStore& store) {
  auto gate = [&](const char* g) {
    const std::string p = std::string("lstm.") + g;
    return Gate{tape.param(store, p + ".w"), tape.param(store, p + ".u"), tape.param(store, p + ".m"),
                tape.param(store, p + ".b")};
  };
  DecoderParams p;
  p.input = gate("input");
  p.forget = gate("forget");
  p.output = gate("output");
  p.candidate = gate("candidate");
  p.embed_table = tape.param(store, "embed.table");
  p.out_context = tape.param(store, "output.context");
  p.out_hidden = tape.param(store, "output.hidden");
  p.out_embed = tape.param(store, "output.embed");
  p.out_bias = tape.param(store, "output.bias");
  p.logits_w = tape.param(store, "output.logits_w");
  p.logits_b = tape.param(store, "output.logits_b");
  return p;
}

Var embed(const DecoderParams& params, Tape& tape, TokenId id) {
  const Tensor& table = params.embed_table.value();
  if (id >= table.rows())
    throw std::out_of_range("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(table.rows()));
  if (id == kPad) return tape.constant(Tensor(Shape{table.cols()}));
  return ad::row(params.embed_table, id);
}

namespace {
Var preactivation(const Gate& g, Var e, Var h, Var r) {
  using namespace ad;
  return add(add(add(matvec(g.w, e), matvec(g.u, h)), matvec(g.m, r)), g.b);
}
}  // namespace

DecoderState lstm_step(Var prev_embed, const DecoderState& state, Var read_vec, const DecoderParams& p) {
  using namespace ad;
  Var i = sigmoid(preactivation(p.input, prev_embed, state.h, read_vec));
  Var f = sigmoid(preactivation(p.forget, prev_embed, state.h, read_vec));
  Var o = sigmoid(preactivation(p.output, prev_embed, state.h, read_vec));
  Var candidate = tanh(preactivation(p.candidate, prev_embed, state.h, read_vec));
  Var c = add(mul(i, candidate), mul(f, state.c));
  return {mul(o, tanh(c)), c};
}

Var output_logits(Var context, Var hidden, Var prev_embed, const DecoderParams& p, const Tensor* z_mask) {
  using namespace ad;
  Var z = tanh(add(add(add(matvec(p.out_context, context), matvec(p.out_hidden, hidden)),
                       matvec(p.out_embed, prev_embed)),
                   p.out_bias));
  if (z_mask) z = dropout(z, *z_mask);
  Var logits = add(matvec(p.logits_w, z), p.logits_b);
  std::vector<double> keep(logits.size(), 1.0);
  keep[kPad] = 0.0;
  keep[kBos] = 0.0;
  return mask_fill(logits, keep, kMaskedLogit);
}

Var output_distribution(Var context, Var hidden, Var prev_embed, const DecoderParams& p, const Tensor* z_mask) {
  return ad::softmax(output_logits(context, hidden, prev_embed, p, z_mask));
}

}  // namespace m3::decoder
