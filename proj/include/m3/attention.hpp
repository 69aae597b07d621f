// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "m3/parameter_store.hpp"
#include "m3/tape.hpp"

namespace m3 {
class Rng;

/// n x d per-frame (or per-clip) features with a validity mask. Masked rows
/// are all zero.
struct FeatureSequence {
  Tensor features;
  std::vector<double> mask;

  FeatureSequence() = default;
  /// All rows valid.
  explicit FeatureSequence(Tensor feats);
  FeatureSequence(Tensor feats, std::vector<double> mask);

  std::size_t frames() const { return features.rows(); }
  std::size_t width() const { return features.cols(); }
  std::size_t valid_frames() const;

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

}  // namespace m3

namespace m3::attention {

/// Score given to masked frames in place of -infinity.
inline constexpr double kMaskedScore = -1e30;

struct AttentionParams {
  Var read_proj;   // W_r: A x M
  Var frame_proj;  // U_a: A x d
  Var bias;        // b_a: A
  Var score;       // w:   A
};

void declare(ParameterStore& store, std::size_t attention_width, std::size_t memory_width,
             std::size_t feature_width, Rng& rng);
AttentionParams bind(Tape& tape, const ParameterStore& store);

/// Per-episode constants: the features with the all-zero blank row appended,
/// and U_a v_i for every frame (n x A). The projection does not depend on the
/// decoding step so it is computed once per episode.
struct PreparedFrames {
  const FeatureSequence* feats = nullptr;
  Var with_blank;  // (n + 1) x d
  Var keys;        // n x A
};

PreparedFrames prepare(Tape& tape, const FeatureSequence& feats, const AttentionParams& params);

struct AttentionResult {
  Var alpha;    // n + 1; last entry is the blank feature
  Var context;  // d
};

/// e_i = w . tanh(W_r r + U_a v_i + b_a) for every frame and for the blank
/// feature (last entry). Masked frames get kMaskedScore. Throws if every
/// frame is masked.
Var relevance_scores(Var read_vec, const PreparedFrames& frames, const AttentionParams& params);

/// alpha = softmax(scores) over n + 1 positions; context = sum_i alpha_i v_i.
AttentionResult attend(Var read_vec, const PreparedFrames& frames, const AttentionParams& params);

}  // namespace m3::attention
