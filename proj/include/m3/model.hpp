// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3/attention.hpp"
#include "m3/decoder.hpp"
#include "m3/memory.hpp"
#include "m3/parameter_store.hpp"
#include "m3/rng.hpp"
#include "m3/tape.hpp"

namespace m3 {

/// Architecture and training settings. Widths that come from data
/// (`feature_width`, `vocab_size`) are zero until the data is known.
struct ModelConfig {
  std::size_t memory_slots = 128;  // N
  std::size_t memory_width = 512;  // M
  std::size_t hidden = 512;
  std::size_t embed = 468;
  std::size_t attention = 256;
  std::size_t feature_width = 0;
  std::size_t vocab_size = 0;
  std::size_t vocab_cap = 20000;
  double dropout = 0.5;
  double clip = 10.0;
  double lambda = 1e-5;
  std::size_t beam = 5;
  std::size_t max_len = 30;           // generated tokens, EOS included
  std::size_t max_caption_tokens = 30;  // ingestion filter, EOS excluded
  std::size_t frames = 28;             // K
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Reads known keys over the defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fixed offsets for per-component seeds derived from ModelConfig::seed.
namespace seed_offset {
inline constexpr std::uint64_t kParams = 1;
inline constexpr std::uint64_t kMemory = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kShuffle = 4;
}  // namespace seed_offset

/// Head parameter prefixes, in the order the heads act within a step.
inline constexpr const char* kTextWriteHead = "head.text_write";
inline constexpr const char* kVisualReadHead = "head.visual_read";
inline constexpr const char* kVisualWriteHead = "head.visual_write";
inline constexpr const char* kTextReadHead = "head.text_read";

/// Declares and initialises every parameter for `config`.
ParameterStore init_parameters(const ModelConfig& config);

/// All model parameters bound onto one tape.
struct BoundModel {
  memory::HeadParams text_write, visual_read, visual_write, text_read;
  attention::AttentionParams attention;
  decoder::DecoderParams decoder;
};

BoundModel bind_model(Tape& tape, const ParameterStore& store);

/// Carried state between steps, as plain values.
struct StepState {
  Tensor memory;  // N x M
  Tensor h;
  Tensor c;
  TokenId prev = kBos;

  friend bool operator==(const StepState&, const StepState&) = default;
};

/// Carried state on a tape.
struct TapeState {
  Var memory, h, c;
  TokenId prev = kBos;
};

/// Inverted-dropout masks for one step (applied to h before the output layer
/// and to z).
struct StepNoise {
  Tensor hidden_mask;
  Tensor output_mask;
};

StepNoise draw_noise(const ModelConfig& config, Rng& rng);

/// Intermediate values of one step, exposed for tests and diagnostics.
struct StepTrace {
  memory::HeadEmission text_write, visual_read, visual_write, text_read;
  Var text_write_weights, visual_read_weights, visual_write_weights, text_read_weights;
  Var memory_after_text_write;
  Var visual_read_vec;
  attention::AttentionResult attention;
  Var text_read_vec;
};

struct StepOutput {
  TapeState state;
  Var logits;
  StepTrace trace;
};

/// Memory = init_memory(N, M, derived seed); h = c = 0; previous token = BOS.
StepState episode_start(const ModelConfig& config, const FeatureSequence& feats);

TapeState to_tape(Tape& tape, const StepState& s);
StepState from_tape(const TapeState& s);

/// One timestep: textual write, visual read, temporal attention, visual
/// write, textual read, LSTM update, word distribution. `noise` is null at
/// inference.
StepOutput m3_step(const BoundModel& model, const attention::PreparedFrames& frames, const TapeState& state,
                   const StepNoise* noise = nullptr);

/// Value-level step on a non-recording tape. Returns the next state and the
/// distribution over the vocabulary.
std::pair<StepState, Tensor> m3_step(const StepState& state, const FeatureSequence& feats,
                                     const ParameterStore& params);

/// Reuses one non-recording tape, the bound parameters and the per-episode
/// attention keys across many steps on the same video. Decoding goes through
/// this.
class InferenceSession {
 public:
  InferenceSession(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats);
  InferenceSession(const InferenceSession&) = delete;
  InferenceSession& operator=(const InferenceSession&) = delete;

  StepState start() const { return start_; }
  /// Next state and the word distribution. The returned state keeps
  /// `state.prev`; the caller sets it to whichever token it commits to.
  std::pair<StepState, Tensor> step(const StepState& state);

 private:
  Tape tape_{false};
  BoundModel model_;
  attention::PreparedFrames frames_;
  std::size_t mark_ = 0;
  StepState start_;
};

/// Teacher-forced objective for one caption:
///   -(1/T) sum_t log rho_t(y_t) + lambda * ||theta||^2
/// over the T non-PAD tokens of `caption`, which must end with EOS.
/// `dropout_rng`, when set, enables dropout with `config.dropout`.
Var sequence_loss(Tape& tape, const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                  std::span<const TokenId> caption, double lambda, Rng* dropout_rng = nullptr);

/// Value-level helper: loss without recording.
double sequence_loss_value(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                           std::span<const TokenId> caption, double lambda);

/// Elementwise clamp to [-bound, bound].
void clip_gradients(GradientMap& grads, double bound);

struct AdadeltaState {
  static constexpr double kDecay = 0.95;
  static constexpr double kEps = 1e-6;
  std::map<std::string, Tensor> grad_sq;   // E[g^2]
  std::map<std::string, Tensor> delta_sq;  // E[dx^2]

  static AdadeltaState fresh(const ParameterStore& params);
  friend bool operator==(const AdadeltaState&, const AdadeltaState&) = default;
};

/// E[g^2] <- rho E[g^2] + (1 - rho) g^2
/// dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2;  theta <- theta + dx
void adadelta_update(ParameterStore& params, const GradientMap& grads, AdadeltaState& state);

/// One (video, caption) training pair with the caption already encoded.
struct Example {
  std::string video_id;
  FeatureSequence feats;
  std::vector<TokenId> caption;  // ends with EOS
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::size_t train_tokens = 0;
  double val_loss = 0.0;
  std::size_t val_tokens = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint;     // best-validation parameters
  std::filesystem::path log;            // line-delimited JSON; empty disables
  std::filesystem::path resume_state;   // written after every epoch; empty disables
  std::filesystem::path resume_from;    // continue from a resume state; empty starts fresh
  nlohmann::json checkpoint_extra = nlohmann::json::object();  // e.g. vocabulary
  /// Applied to each batch gradient before clipping (tests use it to stub
  /// learning out).
  std::function<void(GradientMap&)> gradient_hook;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  ParameterStore final_params;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

/// Shuffled minibatch ADADELTA with elementwise clipping. Writes the
/// checkpoint whenever validation loss improves (train loss when there is no
/// validation data).
TrainResult train(const ModelConfig& config, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainOptions& options);

/// Teacher-forced argmax accuracy over all caption tokens, no dropout.
double token_accuracy(const ParameterStore& params, const ModelConfig& config, const std::vector<Example>& set);

/// Checkpoint = parameter container whose header also carries "config" and
/// anything in `extra`.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params, const ModelConfig& config,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
  ParameterStore params;
  ModelConfig config;
  nlohmann::json header;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m3
