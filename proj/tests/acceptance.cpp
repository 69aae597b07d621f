// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "m3/cli.hpp"
#include "m3/memory.hpp"
#include "m3/textgen.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace m3;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor one_hot(std::size_t n, std::size_t i) {
  Tensor t(Shape{n});
  t[i] = 1.0;
  return t;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << e.str();
  return code;
}

std::string config_path(const std::string& name) { return std::string(M3_CONFIG_DIR) + "/" + name; }

ModelConfig micro() { return testing::shipped_config("micro.json"); }

// --- criteria --------------------------------------------------------------

Outcome gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string out;
  run_cli({"gradcheck"}, &out);
  const double secs = seconds_since(t0);
  const auto line = nlohmann::json::parse(out.substr(0, out.find('\n')));
  const double err = line["max_rel_error"].get<double>();
  return {err < 1e-4 && secs < 60.0, fmt("max_rel_error %.3g at step 1e-5, %.1f s", err, secs)};
}

Outcome memory_round_trip() {
  Rng rng(101);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Tape t(false);
    const std::size_t n = 2 + rng.below(10), m = 1 + rng.below(10), slot = rng.below(n);
    const Tensor add = random_tensor(Shape{m}, rng);
    Var mem = memory::write(t.constant(random_tensor(Shape{n, m}, rng)), t.constant(one_hot(n, slot)),
                            t.constant(Tensor(Shape{m}, 1.0)), t.constant(add));
    const auto r = memory::read(mem, t.constant(one_hot(n, slot))).value();
    for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(r[j] - add[j]));
  }
  return {worst <= 1e-12, fmt("max error %.3g over 100 writes", worst)};
}

Outcome memory_identity_write() {
  const ModelConfig c = micro();
  Rng rng(102);
  ParameterStore p = testing::random_params(c, rng);
  for (const std::string h : {kTextWriteHead, kVisualWriteHead}) {
    for (double& v : p.values(h + ".erase_w")) v = 0.0;
    for (double& v : p.values(h + ".erase_b")) v = -1000.0;
    for (double& v : p.values(h + ".add_w")) v = 0.0;
    for (double& v : p.values(h + ".add_b")) v = 0.0;
  }
  int changed = 0;
  for (int k = 0; k < 100; ++k) {
    StepState s;
    s.memory = random_tensor(Shape{c.memory_slots, c.memory_width}, rng, -1, 1);
    s.h = random_tensor(Shape{c.hidden}, rng, -1, 1);
    s.c = random_tensor(Shape{c.hidden}, rng, -2, 2);
    s.prev = kReservedTokens + rng.below(c.vocab_size - kReservedTokens);
    const auto [next, probs] = m3_step(s, testing::random_feats(c.frames, c.feature_width, rng), p);
    if (!(next.memory == s.memory)) ++changed;
  }
  Tape t(false);
  const Tensor mem = random_tensor(Shape{5, 4}, rng);
  const auto direct = memory::write(t.constant(mem), t.constant(random_tensor(Shape{5}, rng, 0, 1)),
                                    t.constant(Tensor(Shape{4})), t.constant(Tensor(Shape{4})))
                          .value();
  if (!(direct == mem)) ++changed;
  return {changed == 0, fmt("%d of 101 memories changed", changed)};
}

Outcome memory_address_distribution() {
  Rng rng(103);
  double worst_sum = 0.0;
  int out_of_range = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng.below(16), m = 1 + rng.below(8);
    Tape t(false);
    const Tensor mem = random_tensor(Shape{n, m}, rng, -5, 5);
    const Tensor key = random_tensor(Shape{m}, rng, -1, 1);
    const double beta = 1.0 + rng.uniform(0, 50);
    const auto w =
        memory::content_address(t.constant(mem), t.constant(key), t.constant(Tensor::scalar(beta))).value();
    double s = 0.0;
    for (double v : w.values()) {
      if (v < 0.0 || v > 1.0) ++out_of_range;
      s += v;
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  return {worst_sum <= 1e-9 && out_of_range == 0,
          fmt("max |sum - 1| %.3g, %d weights outside [0, 1]", worst_sum, out_of_range)};
}

Outcome attention_properties() {
  Rng rng(104);
  double worst_mass = 0.0, worst_context = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng.below(10), d = 1 + rng.below(6), m = 1 + rng.below(5), a = 1 + rng.below(6);
    ParameterStore s;
    attention::declare(s, a, m, d, rng);
    for (const auto& name : s.names())
      for (double& v : s.values(name)) v = rng.uniform(-1, 1);
    Tensor f = random_tensor(Shape{n, d}, rng);
    std::vector<double> mask(n, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.3) mask[i] = 0.0;
    mask[rng.below(n)] = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i] == 0.0)
        for (std::size_t j = 0; j < d; ++j) f.at(i, j) = 0.0;
    const FeatureSequence fs(f, mask);
    Tape t(false);
    const auto p = attention::bind(t, s);
    const auto res = attention::attend(t.constant(random_tensor(Shape{m}, rng)), attention::prepare(t, fs, p), p);
    const Tensor alpha = res.alpha.value(), context = res.context.value();
    double real = 0.0;
    for (std::size_t i = 0; i < n; ++i) real += alpha[i];
    worst_mass = std::max(worst_mass, real);
    for (std::size_t j = 0; j < d; ++j) {
      double brute = 0.0;
      for (std::size_t i = 0; i < n; ++i) brute += alpha[i] * f.at(i, j);
      worst_context = std::max(worst_context, std::abs(context[j] - brute));
    }
  }
  return {worst_mass <= 1.0 && worst_context <= 1e-12,
          fmt("max real-frame mass %.17g, max context error %.3g", worst_mass, worst_context)};
}

Outcome step_oracle() {
  const ModelConfig c = micro();
  Rng rng(105);
  double worst = 0.0;
  auto diff = [&](const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  };
  for (int k = 0; k < 100; ++k) {
    const ParameterStore p = testing::random_params(c, rng);
    const FeatureSequence fs = testing::random_feats(c.frames, c.feature_width, rng);
    StepState s;
    s.memory = random_tensor(Shape{c.memory_slots, c.memory_width}, rng, -1, 1);
    s.h = random_tensor(Shape{c.hidden}, rng, -1, 1);
    s.c = random_tensor(Shape{c.hidden}, rng, -2, 2);
    s.prev = rng.uniform() < 0.2 ? kBos : kEos + rng.below(c.vocab_size - kEos);
    const auto [next, probs] = m3_step(s, fs, p);
    const oracle::Step want = oracle::step(p, fs, {oracle::mat(s.memory), s.h.values(), s.c.values(), s.prev});
    diff(probs.values(), want.probs);
    diff(next.memory.values(), want.next.mem.v);
    diff(next.h.values(), want.next.h);
    diff(next.c.values(), want.next.c);
  }
  return {worst <= 1e-10, fmt("max deviation %.3g over 100 steps", worst)};
}

/// Best finished sequence by normalized log-probability, EOS included.
std::vector<TokenId> enumerate(const ParameterStore& p, const ModelConfig& c, const FeatureSequence& fs,
                               std::size_t max_len) {
  std::vector<TokenId> best, prefix;
  double best_norm = -1e300;
  std::function<void(const oracle::State&, double)> go = [&](const oracle::State& s, double lp) {
    const oracle::Step st = oracle::step(p, fs, s);
    for (TokenId y = 0; y < c.vocab_size; ++y) {
      if (st.probs[y] <= 0.0) continue;
      prefix.push_back(y);
      const double total = lp + std::log(st.probs[y]);
      if (y == kEos || prefix.size() == max_len) {
        const double norm = total / static_cast<double>(prefix.size());
        if (norm > best_norm || (norm == best_norm && prefix < best)) {
          best_norm = norm;
          best = prefix;
        }
      } else {
        oracle::State next = st.next;
        next.prev = y;
        go(next, total);
      }
      prefix.pop_back();
    }
  };
  const StepState start = episode_start(c, fs);
  go({oracle::mat(start.memory), start.h.values(), start.c.values(), kBos}, 0.0);
  return best;
}

Outcome beam_search_exact() {
  ModelConfig c = micro();
  c.vocab_size = kReservedTokens + 4;
  Rng rng(106);
  int beam_mismatch = 0, greedy_mismatch = 0;
  for (int k = 0; k < 50; ++k) {
    const ParameterStore p = testing::random_params(c, rng, 1.5);
    const FeatureSequence fs = testing::random_feats(c.frames, c.feature_width, rng);
    const Caption got = beam_search(p, c, fs, 6 * 6 * 6, 3);
    std::vector<TokenId> full = got.tokens;
    if (got.length > got.tokens.size()) full.push_back(kEos);
    if (full != enumerate(p, c, fs, 3)) ++beam_mismatch;
    const Caption g = greedy_decode(p, c, fs, 6), b = beam_search(p, c, fs, 1, 6);
    if (g.tokens != b.tokens || g.logprob != b.logprob) ++greedy_mismatch;
  }
  return {beam_mismatch == 0 && greedy_mismatch == 0,
          fmt("%d of 50 full-width beams differ from enumeration, %d of 50 beam-1 runs differ from greedy",
              beam_mismatch, greedy_mismatch)};
}

Sentence words(const std::string& s) {
  std::istringstream in(s);
  Sentence out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Outcome bleu_examples() {
  const std::vector<Sentence> corpus{words("a man is playing a guitar"), words("a dog runs on the grass")};
  std::vector<std::vector<Sentence>> self;
  for (const auto& s : corpus) self.push_back({s});
  const BleuReport same = bleu(corpus, self);
  const BleuReport clip = bleu({words("a a a")}, {{words("a b")}});
  const BleuReport none = bleu({words("x y z w")}, {{words("a b c d")}});
  const bool ok = same.bleu[3] == 1.0 && std::abs(clip.precision[0] - 1.0 / 3.0) <= 1e-12 && none.bleu[3] == 0.0;
  return {ok, fmt("identical %.17g, clipped p1 %.17g, disjoint %.17g", same.bleu[3], clip.precision[0],
                  none.bleu[3])};
}

std::vector<std::vector<Sentence>> references(const Dataset& d) {
  std::vector<std::vector<Sentence>> out;
  for (const auto& v : d.videos) {
    out.emplace_back();
    for (const auto& c : v.captions) {
      out.back().push_back(preprocess_caption(c));
      out.back().back().pop_back();
    }
  }
  return out;
}

double corpus_bleu4(const ParameterStore& p, const testing::Toy& toy, const Dataset& d) {
  std::vector<Sentence> cands;
  for (const auto& v : d.videos)
    cands.push_back(toy.vocab.decode(beam_search(p, toy.config, v.feats, toy.config.beam, toy.config.max_len).tokens));
  return bleu(cands, references(d)).bleu[3];
}

Outcome toy_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec spec;
  spec.held_out_pairs = {{0, 1}, {1, 4}, {2, 7}, {3, 2}};
  const testing::Toy toy = testing::make_toy(testing::shipped_config("toy.json"), spec);
  const TrainResult r = train(toy.config, toy.train, toy.val, {});
  const double acc = token_accuracy(r.final_params, toy.config, toy.train);
  const double train_bleu = corpus_bleu4(r.final_params, toy, toy.data.train);
  const double held_bleu = corpus_bleu4(r.final_params, toy, toy.data.held_out);
  const double secs = seconds_since(t0);
  const bool ok = toy.train.size() == 64 && r.epochs.size() <= 200 && acc >= 0.95 && train_bleu >= 0.9 &&
                  held_bleu >= 0.7 && secs < 600.0;
  return {ok, fmt("%zu videos, %zu epochs, accuracy %.4f, train BLEU@4 %.4f, held-out BLEU@4 %.4f, %.1f s",
                  toy.train.size(), r.epochs.size(), acc, train_bleu, held_bleu, secs)};
}

Outcome determinism() {
  testing::TempDir dir;
  const auto data = dir / "data";
  if (run_cli({"synth", "--out", data.string()}) != 0) return {false, "synth failed"};
  auto pipeline = [&](const std::string& name) {
    const auto out = dir / name;
    return run_cli({"train", "--config", config_path("toy.json"), "--set", "epochs=5", "--features",
                    (data / "train.feats").string(), "--captions", (data / "train.captions.jsonl").string(),
                    "--val-features", (data / "val.feats").string(), "--val-captions",
                    (data / "val.captions.jsonl").string(), "--out", out.string()}) == 0 &&
           run_cli({"generate", "--checkpoint", (out / "model.ckpt").string(), "--features",
                    (data / "test.feats").string(), "--output", (out / "captions.jsonl").string()}) == 0;
  };
  if (!pipeline("a") || !pipeline("b")) return {false, "pipeline failed"};
  const bool ckpt = testing::slurp(dir / "a" / "model.ckpt") == testing::slurp(dir / "b" / "model.ckpt");
  const bool caps = testing::slurp(dir / "a" / "captions.jsonl") == testing::slurp(dir / "b" / "captions.jsonl");
  return {ckpt && caps, fmt("checkpoints %s, captions %s", ckpt ? "identical" : "differ", caps ? "identical" : "differ")};
}

Outcome adadelta_and_clipping() {
  const ModelConfig c = micro();
  Rng rng(107);
  const ParameterStore before = testing::random_params(c, rng);
  ParameterStore params = before;
  AdadeltaState state = AdadeltaState::fresh(params);
  GradientMap zero;
  for (const auto& n : params.names()) zero[n] = Tensor(params.at(n).shape());
  adadelta_update(params, zero, state);
  bool unchanged = true;
  for (const auto& n : params.names()) unchanged = unchanged && params.at(n) == before.at(n);

  GradientMap g;
  for (const auto& n : params.names()) g[n] = random_tensor(params.at(n).shape(), rng, -100, 100);
  const GradientMap raw = g;
  clip_gradients(g, c.clip);
  double worst = 0.0;
  bool inside_kept = true;
  for (const auto& [n, t] : g)
    for (std::size_t i = 0; i < t.size(); ++i) {
      worst = std::max(worst, std::abs(t[i]));
      if (std::abs(raw.at(n)[i]) <= c.clip && t[i] != raw.at(n)[i]) inside_kept = false;
    }
  return {unchanged && worst <= 10.0 && inside_kept,
          fmt("zero-gradient update %s, max |clipped g| %.17g", unchanged ? "is a no-op" : "moved parameters", worst)};
}

}  // namespace

int main() {
  setenv("M3_LOG_LEVEL", "error", 1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient check on the micro model", gradcheck},
      {"memory write then read recovers the add vector", memory_round_trip},
      {"identity write leaves memory bitwise unchanged", memory_identity_write},
      {"address weights form a distribution", memory_address_distribution},
      {"attention mass and context", attention_properties},
      {"m3_step matches the straight-line oracle", step_oracle},
      {"beam search exactness", beam_search_exact},
      {"bleu examples", bleu_examples},
      {"toy task is learned", toy_learning},
      {"train and generate are deterministic", determinism},
      {"adadelta and clipping", adadelta_and_clipping},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %-48s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
