// SPDX-License-Identifier: Apache-2.0
#include "m3/attention.hpp"

#include <algorithm>
#include <stdexcept>

#include "m3/rng.hpp"

namespace m3 {

FeatureSequence::FeatureSequence(Tensor feats) : features(std::move(feats)) {
  if (features.rank() != 2) throw std::invalid_argument("features must be n x d, got " + shape_str(features.shape()));
  mask.assign(features.rows(), 1.0);
}

FeatureSequence::FeatureSequence(Tensor feats, std::vector<double> m) : features(std::move(feats)), mask(std::move(m)) {
  if (features.rank() != 2) throw std::invalid_argument("features must be n x d, got " + shape_str(features.shape()));
  if (mask.size() != features.rows())
    throw std::invalid_argument("mask length " + std::to_string(mask.size()) + " does not match " +
                                std::to_string(features.rows()) + " frames");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) throw std::invalid_argument("mask entries must be 0 or 1");
    if (mask[i] == 0.0)
      for (double v : features.row(i))
        if (v != 0.0) throw std::invalid_argument("masked frame " + std::to_string(i) + " is not all zeros");
  }
}

std::size_t FeatureSequence::valid_frames() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
}

}  // namespace m3

namespace m3::attention {

void declare(ParameterStore& store, std::size_t attention_width, std::size_t memory_width,
             std::size_t feature_width, Rng& rng) {
  const std::size_t a = attention_width;
  store.add_uniform("attention.read_proj", {a, memory_width}, memory_width, a, rng);
  store.add_uniform("attention.frame_proj", {a, feature_width}, feature_width, a, rng);
  store.add_zeros("attention.bias", {a});
  store.add_uniform("attention.score", {a}, a, 1, rng);
}

AttentionParams bind(Tape& tape, const ParameterStore& store) {
  return {tape.param(store, "attention.read_proj"), tape.param(store, "attention.frame_proj"),
          tape.param(store, "attention.bias"), tape.param(store, "attention.score")};
}

PreparedFrames prepare(Tape& tape, const FeatureSequence& feats, const AttentionParams& params) {
  if (feats.valid_frames() == 0) throw std::invalid_argument("attention: every frame is masked");
  const std::size_t n = feats.frames(), d = feats.width();
  std::vector<double> rows(feats.features.values());
  rows.resize((n + 1) * d, 0.0);
  PreparedFrames out;
  out.feats = &feats;
  out.with_blank = tape.constant(Tensor(Shape{n + 1, d}, std::move(rows)));
  out.keys = ad::matmul_transposed(tape.constant(feats.features), params.frame_proj);
  return out;
}

Var relevance_scores(Var read_vec, const PreparedFrames& frames, const AttentionParams& params) {
  using namespace ad;
  const FeatureSequence& feats = *frames.feats;
  if (feats.valid_frames() == 0) throw std::invalid_argument("attention: every frame is masked");
  Var base = add(matvec(params.read_proj, read_vec), params.bias);
  Var real = matvec(tanh(add_rowwise(frames.keys, base)), params.score);
  Var blank = dot(params.score, tanh(base));
  std::vector<double> keep(feats.mask);
  keep.push_back(1.0);
  return mask_fill(concat({real, blank}), keep, kMaskedScore);
}

AttentionResult attend(Var read_vec, const PreparedFrames& frames, const AttentionParams& params) {
  Var alpha = ad::softmax(relevance_scores(read_vec, frames, params));
  return {alpha, ad::weighted_row_sum(alpha, frames.with_blank)};
}

}  // namespace m3::attention
