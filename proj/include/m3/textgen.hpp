// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "m3/model.hpp"

namespace m3 {

struct Hypothesis {
  std::vector<TokenId> tokens;  // EOS included when finished by EOS
  double logprob = 0.0;
  StepState state;
  bool finished = false;

  /// Total log-probability divided by the number of tokens.
  double normalized() const;
};

struct Caption {
  std::vector<TokenId> tokens;  // EOS stripped
  double logprob = 0.0;         // includes the EOS step when present
  std::size_t length = 0;       // tokens scored, EOS included

  double normalized() const { return length ? logprob / static_cast<double>(length) : 0.0; }
};

/// Argmax at every step (ties to the smallest id) until EOS or `max_len`.
Caption greedy_decode(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                      std::size_t max_len);

/// Length-capped beam search. At every depth the `beam` best children of all
/// live hypotheses by total log-probability are kept; children ending in EOS
/// leave the beam as finished, and live hypotheses at `max_len` are finished
/// there. The result is the finished hypothesis with the highest
/// length-normalized log-probability; ties go to the lexicographically
/// smaller token sequence.
Caption beam_search(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                    std::size_t beam, std::size_t max_len);

struct BleuReport {
  std::array<double, 4> precision{};  // modified n-gram precision, n = 1..4
  std::array<double, 4> bleu{};       // cumulative BLEU@1..4
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

using Sentence = std::vector<std::string>;

/// Corpus-level BLEU with clipped n-gram counts, closest reference length
/// (shorter wins ties) and no smoothing.
BleuReport bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references,
                std::size_t max_n = 4);

}  // namespace m3
