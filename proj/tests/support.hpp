// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "m3/attention.hpp"
#include "m3/data_io.hpp"
#include "m3/grad_check.hpp"
#include "m3/model.hpp"
#include "m3/rng.hpp"

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("m3-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline m3::Tensor random_tensor(m3::Shape shape, m3::Rng& rng, double lo = -2.0, double hi = 2.0) {
  m3::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline m3::FeatureSequence random_feats(std::size_t n, std::size_t d, m3::Rng& rng) {
  m3::Tensor f(m3::Shape{n, d});
  for (double& v : f.values()) v = rng.normal();
  return m3::FeatureSequence(std::move(f));
}

/// Initialised parameters with every entry (biases included) redrawn
/// uniformly in [-scale, scale]; the PAD embedding row stays zero.
inline m3::ParameterStore random_params(const m3::ModelConfig& c, m3::Rng& rng, double scale = 0.5) {
  m3::ParameterStore p = m3::init_parameters(c);
  for (const auto& name : p.names()) {
    auto v = p.values(name);
    const std::size_t skip = name == "embed.table" ? c.embed : 0;
    for (std::size_t i = skip; i < v.size(); ++i) v[i] = rng.uniform(-scale, scale);
  }
  return p;
}

/// Directional derivative check: compares grad . u against the central
/// difference of the loss along a random direction u. Returns the relative
/// error |a - n| / max(|a|, |n|, 1e-8).
inline double jvp_error(const m3::LossFn& fn, const m3::ParameterStore& store, std::uint64_t seed,
                        double step = 1e-5) {
  m3::Rng rng(seed);
  m3::GradientMap g;
  {
    m3::Tape tape(true);
    g = tape.backward(fn(tape, store), store);
  }
  m3::ParameterStore up = store, down = store;
  double analytic = 0.0;
  for (const auto& name : store.names()) {
    auto u = up.values(name);
    auto d = down.values(name);
    const auto& gv = g.at(name);
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double dir = rng.uniform(-1.0, 1.0);
      analytic += gv[i] * dir;
      u[i] += step * dir;
      d[i] -= step * dir;
    }
  }
  auto eval = [&](const m3::ParameterStore& s) {
    m3::Tape tape(false);
    return fn(tape, s).value().item();
  };
  const double numeric = (eval(up) - eval(down)) / (2.0 * step);
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

#ifdef M3_CONFIG_DIR
inline m3::ModelConfig shipped_config(const std::string& name) {
  std::ifstream in(std::string(M3_CONFIG_DIR) + "/" + name);
  return m3::ModelConfig::from_json(nlohmann::json::parse(in));
}
#endif

/// The synthetic captioning task wired up the same way the train command
/// does it: vocabulary from training captions, widths from the data.
struct Toy {
  m3::ModelConfig config;
  m3::SyntheticData data;
  m3::Vocabulary vocab;
  std::vector<m3::Example> train, val, test, held_out;
};

inline Toy make_toy(m3::ModelConfig config, const m3::SyntheticSpec& spec) {
  Toy t;
  t.data = m3::gen_synthetic(spec);
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& v : t.data.train.videos)
    for (const auto& c : v.captions) tokenized.push_back(m3::preprocess_caption(c));
  t.vocab = m3::build_vocab(tokenized, config.vocab_cap);
  config.feature_width = t.data.train.width();
  config.vocab_size = t.vocab.size();
  t.config = config;
  t.train = m3::make_examples(t.data.train, t.vocab, config.max_caption_tokens);
  t.val = m3::make_examples(t.data.val, t.vocab, config.max_caption_tokens);
  t.test = m3::make_examples(t.data.test, t.vocab, config.max_caption_tokens);
  t.held_out = m3::make_examples(t.data.held_out, t.vocab, config.max_caption_tokens);
  return t;
}

}  // namespace testing
