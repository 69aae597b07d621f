// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "m3/parameter_store.hpp"
#include "m3/tape.hpp"

namespace m3 {
class Rng;

using TokenId = std::size_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

/// Token strings <-> contiguous ids. Ids 0..3 are PAD, BOS, EOS, UNK; the
/// remaining words follow in order. Unknown words encode to UNK.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return kReservedTokens + words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  /// Drops reserved ids except UNK.
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;
  std::string join(const std::vector<TokenId>& ids) const;

  /// UTF-8, one word per line; line k (0-based) holds id k + 4.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, TokenId> index_;
};

}  // namespace m3

namespace m3::decoder {

/// Logit assigned to ids that can never be the next word (PAD and BOS).
inline constexpr double kMaskedLogit = -1e30;

struct Dims {
  std::size_t vocab;
  std::size_t embed;
  std::size_t hidden;
  std::size_t memory_width;
  std::size_t feature_width;
};

struct Gate {
  Var w;  // from previous embedding, H x d_e
  Var u;  // from previous hidden, H x H
  Var m;  // from memory read, H x M
  Var b;  // H
};

struct DecoderParams {
  Gate input, forget, output, candidate;
  Var embed_table;  // V x d_e
  Var out_context, out_hidden, out_embed, out_bias;  // W_v, W_h, W_e, b_h
  Var logits_w, logits_b;                            // U_rho, b_rho
};

void declare(ParameterStore& store, const Dims& dims, Rng& rng);
DecoderParams bind(Tape& tape, const ParameterStore& store);

struct DecoderState {
  Var h;
  Var c;
};

/// Embedding lookup. PAD is the zero vector and never trained.
Var embed(const DecoderParams& params, Tape& tape, TokenId id);

/// i, f, o = sigmoid(W E + U h + M r + b); c~ = tanh(...);
/// c' = i * c~ + f * c; h' = o * tanh(c').
DecoderState lstm_step(Var prev_embed, const DecoderState& state, Var read_vec, const DecoderParams& params);

/// z = tanh(W_v V + W_h h + W_e E + b_h); logits = U_rho z + b_rho with PAD
/// and BOS masked. `z_mask`, when given, is an inverted-dropout mask on z.
Var output_logits(Var context, Var hidden, Var prev_embed, const DecoderParams& params,
                  const Tensor* z_mask = nullptr);

Var output_distribution(Var context, Var hidden, Var prev_embed, const DecoderParams& params,
                        const Tensor* z_mask = nullptr);

}  // namespace m3::decoder
