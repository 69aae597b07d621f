// SPDX-License-Identifier: Apache-2.0
#include "m3/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "m3/container.hpp"

namespace m3 {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
  };
  positive(memory_slots, "memory_slots");
  positive(memory_width, "memory_width");
  positive(hidden, "hidden");
  positive(embed, "embed");
  positive(attention, "attention");
  positive(vocab_cap, "vocab_cap");
  positive(beam, "beam");
  positive(max_len, "max_len");
  positive(max_caption_tokens, "max_caption_tokens");
  positive(frames, "frames");
  positive(batch_size, "batch_size");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config: dropout must lie in [0, 1)");
  if (!(clip > 0.0)) throw std::invalid_argument("config: clip must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("config: lambda must be non-negative");
}

#define M3_CONFIG_FIELDS(X)                                                                                         \
  X(memory_slots) X(memory_width) X(hidden) X(embed) X(attention) X(feature_width) X(vocab_size) X(vocab_cap)      \
      X(dropout) X(clip) X(lambda) X(beam) X(max_len) X(max_caption_tokens) X(frames) X(batch_size) X(epochs)     \
          X(seed)

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
#define X(f) j[#f] = f;
  M3_CONFIG_FIELDS(X)
#undef X
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
#define X(f)                    \
  if (key == #f) {              \
    value.get_to(c.f);          \
    known = true;               \
  }
      M3_CONFIG_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: bad value for \"" + key + "\": " + e.what());
    }
    if (!known) throw std::invalid_argument("config: unknown key \"" + key + "\"");
  }
  return c;
}

#undef M3_CONFIG_FIELDS

// ---------------------------------------------------------------------------
// Parameters

ParameterStore init_parameters(const ModelConfig& c) {
  c.validate();
  if (c.feature_width == 0 || c.vocab_size < kReservedTokens)
    throw std::invalid_argument("init_parameters: feature_width and vocab_size must be set");
  Rng rng(derive_seed(c.seed, seed_offset::kParams));
  ParameterStore store;
  using memory::HeadKind;
  memory::declare_head(store, kTextWriteHead, c.hidden, c.memory_width, HeadKind::write, rng);
  memory::declare_head(store, kVisualReadHead, c.hidden, c.memory_width, HeadKind::read, rng);
  memory::declare_head(store, kVisualWriteHead, c.feature_width, c.memory_width, HeadKind::write, rng);
  memory::declare_head(store, kTextReadHead, c.hidden + c.feature_width, c.memory_width, HeadKind::read, rng);
  attention::declare(store, c.attention, c.memory_width, c.feature_width, rng);
  decoder::declare(store, {c.vocab_size, c.embed, c.hidden, c.memory_width, c.feature_width}, rng);
  return store;
}

BoundModel bind_model(Tape& tape, const ParameterStore& store) {
  using memory::HeadKind;
  BoundModel m;
  m.text_write = memory::bind_head(tape, store, kTextWriteHead, HeadKind::write);
  m.visual_read = memory::bind_head(tape, store, kVisualReadHead, HeadKind::read);
  m.visual_write = memory::bind_head(tape, store, kVisualWriteHead, HeadKind::write);
  m.text_read = memory::bind_head(tape, store, kTextReadHead, HeadKind::read);
  m.attention = attention::bind(tape, store);
  m.decoder = decoder::bind(tape, store);
  return m;
}

// ---------------------------------------------------------------------------
// Step

StepNoise draw_noise(const ModelConfig& config, Rng& rng) {
  const double keep = 1.0 - config.dropout;
  auto mask = [&](std::size_t n) {
    Tensor t(Shape{n});
    for (auto& v : t.values()) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return t;
  };
  StepNoise noise;
  noise.hidden_mask = mask(config.hidden);
  noise.output_mask = mask(config.hidden);
  return noise;
}

StepState episode_start(const ModelConfig& config, const FeatureSequence& feats) {
  if (feats.frames() == 0) throw std::invalid_argument("episode_start: empty feature sequence");
  StepState s;
  s.memory = memory::init_memory(config.memory_slots, config.memory_width,
                                 derive_seed(config.seed, seed_offset::kMemory));
  s.h = Tensor(Shape{config.hidden});
  s.c = Tensor(Shape{config.hidden});
  s.prev = kBos;
  return s;
}

TapeState to_tape(Tape& tape, const StepState& s) {
  return {tape.constant(s.memory), tape.constant(s.h), tape.constant(s.c), s.prev};
}

StepState from_tape(const TapeState& s) { return {s.memory.value(), s.h.value(), s.c.value(), s.prev}; }

StepOutput m3_step(const BoundModel& m, const attention::PreparedFrames& frames, const TapeState& state,
                   const StepNoise* noise) {
  using namespace memory;
  StepOutput out;
  StepTrace& tr = out.trace;
  Var mem = state.memory;

  // textual write, conditioned on h_{t-1}
  tr.text_write = emit_head(state.h, m.text_write);
  tr.text_write_weights = content_address(mem, tr.text_write.key, tr.text_write.sharpen);
  mem = write(mem, tr.text_write_weights, tr.text_write.erase, tr.text_write.add);
  tr.memory_after_text_write = mem;

  // visual read drives temporal attention
  tr.visual_read = emit_head(state.h, m.visual_read);
  tr.visual_read_weights = content_address(mem, tr.visual_read.key, tr.visual_read.sharpen);
  tr.visual_read_vec = read(mem, tr.visual_read_weights);
  tr.attention = attention::attend(tr.visual_read_vec, frames, m.attention);
  Var context = tr.attention.context;

  // visual write of the attended feature
  tr.visual_write = emit_head(context, m.visual_write);
  tr.visual_write_weights = content_address(mem, tr.visual_write.key, tr.visual_write.sharpen);
  mem = write(mem, tr.visual_write_weights, tr.visual_write.erase, tr.visual_write.add);

  // textual read for the language model
  tr.text_read = emit_head(ad::concat({state.h, context}), m.text_read);
  tr.text_read_weights = content_address(mem, tr.text_read.key, tr.text_read.sharpen);
  tr.text_read_vec = read(mem, tr.text_read_weights);

  Tape& tape = *state.h.tape;
  Var prev_embed = decoder::embed(m.decoder, tape, state.prev);
  decoder::DecoderState next = decoder::lstm_step(prev_embed, {state.h, state.c}, tr.text_read_vec, m.decoder);

  Var h_out = noise ? ad::dropout(next.h, noise->hidden_mask) : next.h;
  out.logits = decoder::output_logits(context, h_out, prev_embed, m.decoder, noise ? &noise->output_mask : nullptr);
  out.state = {mem, next.h, next.c, state.prev};
  return out;
}

std::pair<StepState, Tensor> m3_step(const StepState& state, const FeatureSequence& feats,
                                     const ParameterStore& params) {
  Tape tape(false);
  BoundModel m = bind_model(tape, params);
  auto frames = attention::prepare(tape, feats, m.attention);
  StepOutput out = m3_step(m, frames, to_tape(tape, state), nullptr);
  Tensor probs = ad::softmax(out.logits).value();
  return {from_tape(out.state), std::move(probs)};
}

InferenceSession::InferenceSession(const ParameterStore& params, const ModelConfig& config,
                                   const FeatureSequence& feats)
    : model_(bind_model(tape_, params)), start_(episode_start(config, feats)) {
  frames_ = attention::prepare(tape_, feats, model_.attention);
  mark_ = tape_.size();
}

std::pair<StepState, Tensor> InferenceSession::step(const StepState& state) {
  StepOutput out = m3_step(model_, frames_, to_tape(tape_, state), nullptr);
  std::pair<StepState, Tensor> result{from_tape(out.state), ad::softmax(out.logits).value()};
  tape_.truncate(mark_);
  return result;
}

// ---------------------------------------------------------------------------
// Objective

namespace {
std::size_t valid_length(std::span<const TokenId> caption) {
  std::size_t n = 0;
  while (n < caption.size() && caption[n] != kPad) ++n;
  for (std::size_t i = n; i < caption.size(); ++i)
    if (caption[i] != kPad) throw std::invalid_argument("sequence_loss: PAD inside caption");
  if (n == 0) throw std::invalid_argument("sequence_loss: caption has no valid tokens");
  if (caption[n - 1] != kEos) throw std::invalid_argument("sequence_loss: caption must end with EOS");
  return n;
}
}  // namespace

Var sequence_loss(Tape& tape, const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                  std::span<const TokenId> caption, double lambda, Rng* dropout_rng) {
  const std::size_t n = valid_length(caption);
  BoundModel m = bind_model(tape, params);
  auto frames = attention::prepare(tape, feats, m.attention);
  TapeState state = to_tape(tape, episode_start(config, feats));

  std::vector<Var> log_probs;
  log_probs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::optional<StepNoise> noise;
    if (dropout_rng && config.dropout > 0.0) noise = draw_noise(config, *dropout_rng);
    StepOutput out = m3_step(m, frames, state, noise ? &*noise : nullptr);
    log_probs.push_back(ad::pick(ad::log_softmax(out.logits), caption[t]));
    state = out.state;
    state.prev = caption[t];
  }
  Var nll = ad::scale(ad::sum(ad::concat(log_probs)), -1.0 / static_cast<double>(n));

  std::vector<Var> norms;
  for (const auto& name : params.names()) norms.push_back(ad::sum_squares(tape.param(params, name)));
  return ad::add(nll, ad::scale(ad::sum(ad::concat(norms)), lambda));
}

double sequence_loss_value(const ParameterStore& params, const ModelConfig& config, const FeatureSequence& feats,
                           std::span<const TokenId> caption, double lambda) {
  Tape tape(false);
  return sequence_loss(tape, params, config, feats, caption, lambda).value().item();
}

// ---------------------------------------------------------------------------
// Optimisation

void clip_gradients(GradientMap& grads, double bound) {
  if (!(bound > 0)) throw std::invalid_argument("clip_gradients: bound must be positive");
  for (auto& [_, g] : grads)
    for (auto& v : g.values()) v = std::clamp(v, -bound, bound);
}

AdadeltaState AdadeltaState::fresh(const ParameterStore& params) {
  AdadeltaState s;
  for (const auto& [name, t] : params) {
    s.grad_sq.emplace(name, Tensor(t.shape()));
    s.delta_sq.emplace(name, Tensor(t.shape()));
  }
  return s;
}

void adadelta_update(ParameterStore& params, const GradientMap& grads, AdadeltaState& state) {
  constexpr double rho = AdadeltaState::kDecay, eps = AdadeltaState::kEps;
  for (const auto& name : params.names()) {
    auto theta = params.values(name);
    const Tensor& g = grads.at(name);
    Tensor& eg = state.grad_sq.at(name);
    Tensor& ed = state.delta_sq.at(name);
    if (g.size() != theta.size() || eg.size() != theta.size())
      throw std::invalid_argument("adadelta_update: shape mismatch for " + name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
      const double dx = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
      ed[i] = rho * ed[i] + (1.0 - rho) * dx * dx;
      theta[i] += dx;
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params, const ModelConfig& config,
                     const nlohmann::json& extra) {
  nlohmann::json header = extra;
  header["kind"] = "model";
  header["config"] = config.to_json();
  save_parameters(path, params, header);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  LoadedParameters loaded = load_parameters(path);
  if (!loaded.header.contains("config"))
    throw FormatError(FormatError::Kind::malformed_header, "malformed header: checkpoint has no config");
  Checkpoint c;
  c.config = ModelConfig::from_json(loaded.header["config"]);
  c.params = std::move(loaded.store);
  c.header = std::move(loaded.header);
  return c;
}

namespace {

constexpr const char* kParamPrefix = "param/";
constexpr const char* kGradSqPrefix = "adadelta.grad_sq/";
constexpr const char* kDeltaSqPrefix = "adadelta.delta_sq/";

struct ResumePoint {
  ParameterStore params;
  AdadeltaState opt;
  std::size_t epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

void save_resume(const std::filesystem::path& path, const ResumePoint& r, const ModelConfig& config) {
  ParameterStore all;
  for (const auto& [name, t] : r.params) all.add(kParamPrefix + name, t);
  for (const auto& [name, t] : r.opt.grad_sq) all.add(kGradSqPrefix + name, t);
  for (const auto& [name, t] : r.opt.delta_sq) all.add(kDeltaSqPrefix + name, t);
  nlohmann::json header;
  header["kind"] = "resume";
  header["config"] = config.to_json();
  header["epoch"] = r.epoch;
  header["best_val_loss"] = r.best_val_loss;
  header["best_epoch"] = r.best_epoch;
  save_parameters(path, all, header);
}

ResumePoint load_resume(const std::filesystem::path& path) {
  LoadedParameters loaded = load_parameters(path);
  if (loaded.header.value("kind", "") != "resume")
    throw FormatError(FormatError::Kind::malformed_header, "malformed header: not a resume state file");
  ResumePoint r;
  auto strip = [](const std::string& name, const std::string& prefix) {
    return name.rfind(prefix, 0) == 0 ? std::optional<std::string>(name.substr(prefix.size())) : std::nullopt;
  };
  for (const auto& [name, t] : loaded.store) {
    if (auto p = strip(name, kParamPrefix)) r.params.add(*p, t);
    else if (auto g = strip(name, kGradSqPrefix)) r.opt.grad_sq.emplace(*g, t);
    else if (auto d = strip(name, kDeltaSqPrefix)) r.opt.delta_sq.emplace(*d, t);
  }
  r.epoch = loaded.header.at("epoch").get<std::size_t>();
  r.best_val_loss = loaded.header.at("best_val_loss").get<double>();
  r.best_epoch = loaded.header.at("best_epoch").get<std::size_t>();
  return r;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::size_t caption_tokens(const Example& e) {
  return static_cast<std::size_t>(std::count_if(e.caption.begin(), e.caption.end(), [](TokenId t) { return t != kPad; }));
}

void write_log(std::ofstream& log, std::size_t epoch, const char* split, double loss, std::size_t tokens) {
  if (!log.is_open()) return;
  nlohmann::json rec;
  rec["epoch"] = epoch;
  rec["split"] = split;
  rec["loss"] = loss;
  rec["tokens"] = tokens;
  log << rec.dump() << '\n';
  log.flush();
}

}  // namespace

TrainResult train(const ModelConfig& config, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");

  ResumePoint run;
  if (!options.resume_from.empty()) {
    run = load_resume(options.resume_from);
    ParameterStore reference = init_parameters(config);
    reference.assign(run.params);  // shape check against the config
  } else {
    run.params = init_parameters(config);
    run.opt = AdadeltaState::fresh(run.params);
  }

  std::ofstream log;
  if (!options.log.empty()) {
    log.open(options.log, options.resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log: " + options.log.string());
  }

  TrainResult result;
  const std::size_t batch = config.batch_size;
  for (std::size_t epoch = run.epoch + 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(config.seed, seed_offset::kShuffle), epoch));
    shuffle(order, shuffle_rng);
    Rng dropout_rng(derive_seed(derive_seed(config.seed, seed_offset::kDropout), epoch));

    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch_id = 0; start < order.size(); start += batch, ++batch_id) {
      const std::size_t end = std::min(start + batch, order.size());
      GradientMap acc;
      for (const auto& [name, t] : run.params) acc.emplace(name, Tensor(t.shape()));
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = train_set[order[k]];
        Tape tape(true);
        Var loss = sequence_loss(tape, run.params, config, ex.feats, ex.caption, config.lambda, &dropout_rng);
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) {
          nlohmann::json rec = {{"epoch", epoch}, {"split", "train"}, {"error", "non-finite loss"},
                                {"batch", batch_id}};
          if (log.is_open()) log << rec.dump() << '\n';
          throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_id),
                              epoch, batch_id);
        }
        loss_sum += lv;
        stats.train_tokens += caption_tokens(ex);
        GradientMap g = tape.backward(loss, run.params);
        for (auto& [name, t] : acc) {
          const Tensor& src = g.at(name);
          for (std::size_t i = 0; i < t.size(); ++i) t[i] += src[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [_, t] : acc)
        for (auto& v : t.values()) v *= inv;
      if (options.gradient_hook) options.gradient_hook(acc);
      clip_gradients(acc, config.clip);
      adadelta_update(run.params, acc, run.opt);
    }
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());

    if (!val_set.empty()) {
      double val_sum = 0.0;
      for (const Example& ex : val_set) {
        val_sum += sequence_loss_value(run.params, config, ex.feats, ex.caption, config.lambda);
        stats.val_tokens += caption_tokens(ex);
      }
      stats.val_loss = val_sum / static_cast<double>(val_set.size());
    } else {
      stats.val_loss = stats.train_loss;
    }

    write_log(log, epoch, "train", stats.train_loss, stats.train_tokens);
    if (!val_set.empty()) write_log(log, epoch, "val", stats.val_loss, stats.val_tokens);
    spdlog::info("epoch {} train {:.6f} val {:.6f}", epoch, stats.train_loss, stats.val_loss);

    if (stats.val_loss < run.best_val_loss) {
      run.best_val_loss = stats.val_loss;
      run.best_epoch = epoch;
      if (!options.checkpoint.empty()) {
        nlohmann::json extra = options.checkpoint_extra;
        extra["epoch"] = epoch;
        save_checkpoint(options.checkpoint, run.params, config, extra);
      }
    }
    run.epoch = epoch;
    if (!options.resume_state.empty()) save_resume(options.resume_state, run, config);
    result.epochs.push_back(stats);
  }

  result.best_val_loss = run.best_val_loss;
  result.best_epoch = run.best_epoch;
  result.final_params = std::move(run.params);
  return result;
}

double token_accuracy(const ParameterStore& params, const ModelConfig& config, const std::vector<Example>& set) {
  std::size_t hits = 0, total = 0;
  for (const Example& ex : set) {
    InferenceSession session(params, config, ex.feats);
    StepState state = session.start();
    for (TokenId y : ex.caption) {
      if (y == kPad) break;
      auto [next, probs] = session.step(state);
      const auto& p = probs.values();
      const auto best = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
      hits += best == y;
      ++total;
      state = std::move(next);
      state.prev = y;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace m3
