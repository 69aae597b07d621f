// SPDX-License-Identifier: Apache-2.0
#include "m3/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "m3/container.hpp"
#include "m3/data_io.hpp"
#include "m3/rng.hpp"
#include "m3/textgen.hpp"

namespace m3::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#define M3_RUN_PATHS(X) X(features) X(captions) X(val_features) X(val_captions) X(checkpoint) X(output)

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace

json RunConfig::to_json() const {
  json j = model.to_json();
#define X(f) j[#f] = f;
  M3_RUN_PATHS(X)
#undef X
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  RunConfig rc;
  json model = json::object();
  for (const auto& [key, value] : j.items()) {
    bool path = false;
#define X(f)                                                                                                        \
  if (key == #f) {                                                                                                  \
    if (!value.is_string()) throw std::invalid_argument("config: \"" #f "\" must be a string");                     \
    rc.f = value.get<std::string>();                                                                                \
    path = true;                                                                                                    \
  }
    M3_RUN_PATHS(X)
#undef X
    if (!path) model[key] = value;
  }
  rc.model = ModelConfig::from_json(model);
  return rc;
}

#undef M3_RUN_PATHS

ModelConfig micro_config() {
  ModelConfig c;
  c.memory_slots = 4;
  c.memory_width = 8;
  c.hidden = 8;
  c.embed = 8;
  c.attention = 5;
  c.feature_width = 6;
  c.vocab_size = 12;
  c.frames = 2;
  c.dropout = 0.0;
  c.max_len = 3;
  c.batch_size = 1;
  c.epochs = 1;
  c.seed = 7;
  return c;
}

GradCheckReport micro_gradcheck(const ModelConfig& config, double step, bool corrupt, std::size_t tokens) {
  if (tokens == 0) throw std::invalid_argument("gradcheck: caption needs at least one token");
  ParameterStore params = init_parameters(config);
  Rng rng(derive_seed(config.seed, 100));
  for (const auto& name : params.names()) {
    const bool bias = name.size() >= 2 && (name.ends_with("_b") || name.ends_with(".b") || name.ends_with("bias"));
    if (!bias) continue;
    for (double& v : params.values(name)) v = rng.uniform(-0.5, 0.5);
  }
  Tensor f(Shape{config.frames, config.feature_width});
  for (double& v : f.values()) v = rng.normal();
  const FeatureSequence feats(std::move(f));
  std::vector<TokenId> caption;
  for (std::size_t i = 0; i + 1 < tokens; ++i)
    caption.push_back(static_cast<TokenId>(kReservedTokens + rng.below(config.vocab_size - kReservedTokens)));
  caption.push_back(kEos);

  LossFn fn = [&](Tape& tape, const ParameterStore& p) {
    return sequence_loss(tape, p, config, feats, caption, config.lambda);
  };
  std::function<void(GradientMap&)> tamper;
  if (corrupt)
    tamper = [](GradientMap& g) {
      auto& t = g.begin()->second;
      t[0] += 1.0 + std::abs(t[0]);
    };
  return grad_check(fn, params, step, tamper);
}

namespace {

void setup_logging() {
  auto logger = spdlog::get("m3");
  if (!logger) {
    logger = spdlog::stderr_logger_mt("m3");
    logger->set_pattern("[%l] %v");
  }
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("M3_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw UsageError("M3_LOG_LEVEL must be one of error, info, debug (got \"" + level + "\")");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

/// Config file (if any), then --set key=value pairs, then dedicated flags.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON config file");
    app->add_option("--set", sets, "Override one config key, e.g. --set hidden=64 (value parsed as JSON)");
    app->add_option("--seed", seed, "Random seed");
  }

  /// Config file over `base`, then --set, then --seed.
  json merged(json base) const {
    if (!file.empty()) {
      const json j = read_json_file(file);
      if (!j.is_object()) throw UsageError("config must be a JSON object");
      base.update(j);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got \"" + s + "\"");
      json v;
      try {
        v = json::parse(s.substr(eq + 1));
      } catch (const json::exception&) {
        v = s.substr(eq + 1);
      }
      base[s.substr(0, eq)] = std::move(v);
    }
    if (seed) base["seed"] = *seed;
    return base;
  }

  RunConfig resolve() const {
    try {
      return RunConfig::from_json(merged(json::object()));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
};

FeatureSequence fit_frames(const FeatureSequence& fs, std::size_t k) {
  if (fs.frames() == k) return fs;
  std::vector<double> rows;
  std::size_t n = 0;
  for (std::size_t i = 0; i < fs.frames(); ++i)
    if (fs.mask[i] == 1.0) {
      rows.insert(rows.end(), fs.features.row(i).begin(), fs.features.row(i).end());
      ++n;
    }
  return sample_frames(Tensor(Shape{n, fs.width()}, std::move(rows)), k);
}

Dataset load_split(const std::string& features, const std::string& captions, std::size_t frames,
                   std::size_t width) {
  Dataset d = load_features(features, width);
  for (auto& v : d.videos) v.feats = fit_frames(v.feats, frames);
  if (!captions.empty()) attach_captions(d, load_captions(captions));
  return d;
}

std::vector<std::string> caption_words(const std::string& text) {
  auto t = preprocess_caption(text);
  t.pop_back();
  return t;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string features, captions, val_features, val_captions, out;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.cfg.resolve();
  if (!a.features.empty()) rc.features = a.features;
  if (!a.captions.empty()) rc.captions = a.captions;
  if (!a.val_features.empty()) rc.val_features = a.val_features;
  if (!a.val_captions.empty()) rc.val_captions = a.val_captions;
  if (!a.out.empty()) rc.output = a.out;
  if (rc.features.empty() || rc.captions.empty()) throw UsageError("train needs --features and --captions");
  if (rc.output.empty()) throw UsageError("train needs --out");
  if (rc.val_features.empty() != rc.val_captions.empty())
    throw UsageError("--val-features and --val-captions go together");
  rc.model.validate();

  Dataset train_data = load_split(rc.features, rc.captions, rc.model.frames, rc.model.feature_width);
  train_data.validate(true);
  if (train_data.videos.empty()) throw std::runtime_error("no training videos in " + rc.features);
  rc.model.feature_width = train_data.width();

  std::vector<std::vector<std::string>> tokenized;
  for (const auto& v : train_data.videos)
    for (const auto& c : v.captions) tokenized.push_back(preprocess_caption(c));
  const Vocabulary vocab = build_vocab(tokenized, rc.model.vocab_cap);
  rc.model.vocab_size = vocab.size();

  const auto train_set = make_examples(train_data, vocab, rc.model.max_caption_tokens);
  std::vector<Example> val_set;
  if (!rc.val_features.empty()) {
    Dataset val = load_split(rc.val_features, rc.val_captions, rc.model.frames, rc.model.feature_width);
    val_set = make_examples(val, vocab, rc.model.max_caption_tokens);
  }

  const fs::path dir(rc.output);
  fs::create_directories(dir);
  rc.checkpoint = (dir / "model.ckpt").string();
  write_json_file(dir / "config.json", rc.to_json());

  TrainOptions opts;
  opts.checkpoint = dir / "model.ckpt";
  opts.log = dir / "train.log.jsonl";
  opts.resume_state = dir / "resume.state";
  if (a.resume) opts.resume_from = opts.resume_state;
  opts.checkpoint_extra["vocab"] = vocab.words();
  spdlog::info("training on {} examples ({} validation), vocabulary {}", train_set.size(), val_set.size(),
               vocab.size());
  const TrainResult res = train(rc.model, train_set, val_set, opts);
  out << json{{"epochs", res.epochs.size()}, {"best_epoch", res.best_epoch}, {"best_loss", res.best_val_loss},
              {"checkpoint", opts.checkpoint.string()}}
             .dump()
      << '\n';
  return 0;
}

// --- generate --------------------------------------------------------------

struct GenerateArgs {
  ConfigFlags cfg;
  std::string checkpoint, features, output;
  std::optional<std::size_t> beam, max_len;
  bool greedy = false;
};

void check_shapes(const Checkpoint& ck, ModelConfig wanted) {
  if (wanted.feature_width == 0) wanted.feature_width = ck.config.feature_width;
  if (wanted.vocab_size == 0) wanted.vocab_size = ck.config.vocab_size;
  const ParameterStore expect = init_parameters(wanted);
  for (const auto& [name, t] : expect) {
    if (!ck.params.contains(name))
      throw UsageError("checkpoint has no parameter " + name + " (config shape " + shape_str(t.shape()) + ")");
    const Tensor& have = ck.params.at(name);
    if (have.shape() != t.shape())
      throw UsageError("shape mismatch for " + name + ": checkpoint " + shape_str(have.shape()) + ", config " +
                       shape_str(t.shape()));
  }
  for (const auto& [name, t] : ck.params)
    if (!expect.contains(name)) throw UsageError("checkpoint parameter " + name + " is not in the config");
}

int cmd_generate(const GenerateArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  ModelConfig decode = ck.config;
  if (!a.cfg.file.empty() || !a.cfg.sets.empty()) {
    const RunConfig rc = a.cfg.resolve();
    check_shapes(ck, rc.model);
    decode.beam = rc.model.beam;
    decode.max_len = rc.model.max_len;
  }
  if (a.beam) decode.beam = *a.beam;
  if (a.max_len) decode.max_len = *a.max_len;
  if (decode.beam == 0 || decode.max_len == 0) throw UsageError("beam and max_len must be positive");
  if (!ck.header.contains("vocab")) throw std::runtime_error("checkpoint has no vocabulary: " + a.checkpoint);
  const Vocabulary vocab(ck.header["vocab"].get<std::vector<std::string>>());
  if (vocab.size() != ck.config.vocab_size)
    throw std::runtime_error("checkpoint vocabulary has " + std::to_string(vocab.size()) + " entries, config says " +
                             std::to_string(ck.config.vocab_size));

  Dataset data = load_split(a.features, "", ck.config.frames, ck.config.feature_width);
  std::sort(data.videos.begin(), data.videos.end(),
            [](const Video& x, const Video& y) { return x.video_id < y.video_id; });

  std::ofstream out(a.output, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + a.output);
  for (const auto& v : data.videos) {
    const Caption c = a.greedy ? greedy_decode(ck.params, ck.config, v.feats, decode.max_len)
                               : beam_search(ck.params, ck.config, v.feats, decode.beam, decode.max_len);
    out << json{{"video_id", v.video_id}, {"caption", vocab.join(c.tokens)}, {"logprob", c.logprob}}.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + a.output);

  json echo = decode.to_json();
  echo["checkpoint"] = a.checkpoint;
  echo["features"] = a.features;
  echo["output"] = a.output;
  echo["greedy"] = a.greedy;
  write_json_file(a.output + ".config.json", echo);
  spdlog::info("wrote {} captions to {}", data.videos.size(), a.output);
  return 0;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(const std::string& cand_path, const std::string& ref_path, std::ostream& out, std::ostream& err) {
  const auto cands = load_captions(cand_path);
  const auto refs = load_captions(ref_path);
  std::vector<std::string> missing_refs, missing_cands;
  for (const auto& [id, _] : cands)
    if (!refs.count(id)) missing_refs.push_back(id);
  for (const auto& [id, _] : refs)
    if (!cands.count(id)) missing_cands.push_back(id);
  if (!missing_refs.empty() || !missing_cands.empty()) {
    for (const auto& id : missing_refs) err << "no reference for video " << id << '\n';
    for (const auto& id : missing_cands) err << "no candidate for video " << id << '\n';
    return 1;
  }
  if (cands.empty()) throw std::runtime_error("no candidates in " + cand_path);

  std::vector<Sentence> c;
  std::vector<std::vector<Sentence>> r;
  auto words = [](const std::string& text) {
    Sentence s;
    try {
      s = caption_words(text);
    } catch (const std::invalid_argument&) {
    }
    return s;
  };
  for (const auto& [id, texts] : cands) {
    if (texts.size() != 1) throw std::runtime_error("video " + id + " has more than one candidate");
    c.push_back(words(texts.front()));
    std::vector<Sentence> rs;
    for (const auto& t : refs.at(id)) rs.push_back(words(t));
    r.push_back(std::move(rs));
  }
  const BleuReport rep = bleu(c, r);
  out << json{{"bleu", rep.bleu},
              {"precision", rep.precision},
              {"brevity_penalty", rep.brevity_penalty},
              {"candidate_length", rep.candidate_length},
              {"reference_length", rep.reference_length}}
             .dump()
      << '\n';
  return 0;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  ConfigFlags cfg;
  bool corrupt = false;
  std::size_t tokens = 3;
  double threshold = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  ModelConfig config;
  try {
    config = ModelConfig::from_json(a.cfg.merged(micro_config().to_json()));
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  bool ok = true;
  for (double step : {1e-5, 1e-3}) {
    const GradCheckReport r = micro_gradcheck(config, step, a.corrupt, a.tokens);
    out << json{{"step", step},
                {"max_rel_error", r.max_rel_error},
                {"max_abs_error", r.max_abs_error},
                {"worst_param", r.worst_param},
                {"worst_index", r.worst_index},
                {"analytic", r.analytic},
                {"numeric", r.numeric},
                {"entries", r.entries}}
               .dump()
        << '\n';
    if (step == 1e-5) ok = r.max_rel_error < a.threshold;
  }
  return ok ? 0 : 1;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  SyntheticSpec spec;
  std::size_t held_out = 0;
  std::string out;
};

int cmd_synth(SynthArgs a, std::ostream& out) {
  if (a.held_out > std::min(a.spec.objects, a.spec.actions))
    throw UsageError("--held-out cannot exceed the number of objects or actions");
  for (std::size_t i = 0; i < a.held_out; ++i) a.spec.held_out_pairs.emplace_back(i, (3 * i + 1) % a.spec.actions);
  const SyntheticData d = gen_synthetic(a.spec);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  for (const Dataset* s : {&d.train, &d.val, &d.test, &d.held_out}) {
    save_features(dir / (s->split + ".feats"), *s);
    save_captions(dir / (s->split + ".captions.jsonl"), *s);
  }
  json pairs = json::array();
  for (const auto& [o, act] : a.spec.held_out_pairs) pairs.push_back({o, act});
  write_json_file(dir / "synth.json", {{"seed", a.spec.seed},
                                       {"objects", a.spec.objects},
                                       {"actions", a.spec.actions},
                                       {"frames", a.spec.frames},
                                       {"width", a.spec.width},
                                       {"samples", a.spec.samples},
                                       {"noise", a.spec.noise},
                                       {"held_out_pairs", pairs}});
  out << json{{"train", d.train.videos.size()},
              {"val", d.val.videos.size()},
              {"test", d.test.videos.size()},
              {"held_out", d.held_out.videos.size()}}
             .dump()
      << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal memory video captioning"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  ta.cfg.attach(train_cmd);
  train_cmd->add_option("--features", ta.features, "Training features file");
  train_cmd->add_option("--captions", ta.captions, "Training captions (JSONL)");
  train_cmd->add_option("--val-features", ta.val_features, "Validation features file");
  train_cmd->add_option("--val-captions", ta.val_captions, "Validation captions (JSONL)");
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->add_flag("--resume", ta.resume, "Continue from the resume state in the output directory");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Caption every video in a features file");
  ga.cfg.attach(gen_cmd);
  gen_cmd->add_option("--checkpoint", ga.checkpoint, "Model checkpoint")->required();
  gen_cmd->add_option("--features", ga.features, "Features file")->required();
  gen_cmd->add_option("--output", ga.output, "Captions output (JSONL)")->required();
  gen_cmd->add_option("--beam", ga.beam, "Beam width");
  gen_cmd->add_option("--max-len", ga.max_len, "Maximum caption length including EOS");
  gen_cmd->add_flag("--greedy", ga.greedy, "Greedy decoding instead of beam search");

  std::string cand_path, ref_path;
  auto* eval_cmd = app.add_subcommand("eval", "Corpus BLEU of candidates against references");
  eval_cmd->add_option("--candidates", cand_path, "Candidate captions (JSONL)")->required();
  eval_cmd->add_option("--references", ref_path, "Reference captions (JSONL)")->required();

  GradcheckArgs gca;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the model gradient");
  gca.cfg.attach(gc_cmd);
  gc_cmd->add_flag("--corrupt", gca.corrupt, "Perturb one analytic gradient entry");
  gc_cmd->add_option("--tokens", gca.tokens, "Caption length including EOS");
  gc_cmd->add_option("--threshold", gca.threshold, "Pass threshold for the step 1e-5 error");

  SynthArgs sa;
  auto* syn_cmd = app.add_subcommand("synth", "Generate the synthetic captioning task");
  syn_cmd->add_option("--out", sa.out, "Output directory")->required();
  syn_cmd->add_option("--seed", sa.spec.seed, "Random seed");
  syn_cmd->add_option("--objects", sa.spec.objects, "Number of objects");
  syn_cmd->add_option("--actions", sa.spec.actions, "Number of actions");
  syn_cmd->add_option("--frames", sa.spec.frames, "Frames per video");
  syn_cmd->add_option("--width", sa.spec.width, "Feature width");
  syn_cmd->add_option("--samples", sa.spec.samples, "Number of videos");
  syn_cmd->add_option("--noise", sa.spec.noise, "Feature noise standard deviation");
  syn_cmd->add_option("--held-out", sa.held_out, "Number of (object, action) pairs kept out of training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    setup_logging();
    if (*train_cmd) return cmd_train(ta, out);
    if (*gen_cmd) return cmd_generate(ga);
    if (*eval_cmd) return cmd_eval(cand_path, ref_path, out, err);
    if (*gc_cmd) return cmd_gradcheck(gca, out);
    if (*syn_cmd) return cmd_synth(sa, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"m3"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace m3::cli
