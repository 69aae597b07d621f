// SPDX-License-Identifier: Apache-2.0
#include "m3/data_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "m3/container.hpp"
#include "m3/rng.hpp"

namespace m3 {

using nlohmann::json;

std::vector<std::string> preprocess_caption(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (unsigned char ch : text) {
    if (ch < 0x80 && std::ispunct(ch)) continue;
    clean.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch));
  }
  std::vector<std::string> out;
  std::istringstream words(clean);
  for (std::string w; words >> w;) out.push_back(std::move(w));
  if (out.empty()) throw std::invalid_argument("caption is empty after preprocessing: \"" + text + "\"");
  out.emplace_back("<eos>");
  return out;
}

FeatureSequence sample_frames(const Tensor& features, std::size_t k) {
  if (features.rank() != 2) throw std::invalid_argument("sample_frames: features must be n x d");
  if (k == 0) throw std::invalid_argument("sample_frames: K must be at least 1");
  const std::size_t n = features.rows(), d = features.cols();
  if (n == 0) throw std::invalid_argument("sample_frames: video has no frames");

  Tensor out(Shape{k, d});
  std::vector<double> mask(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t src;
    if (n < k) {
      if (i >= n) continue;
      src = i;
    } else {
      src = k == 1 ? 0
                   : static_cast<std::size_t>(std::llround(static_cast<double>(i * (n - 1)) /
                                                           static_cast<double>(k - 1)));
    }
    std::copy_n(features.row(src).begin(), d, out.row(i).begin());
    mask[i] = 1.0;
  }
  return FeatureSequence(std::move(out), std::move(mask));
}

void Dataset::validate(bool need_captions) const {
  std::set<std::string> seen;
  for (const auto& v : videos) {
    if (v.feats.width() != width())
      throw std::invalid_argument("video " + v.video_id + " has width " + std::to_string(v.feats.width()) +
                                  ", dataset width is " + std::to_string(width()));
    if (!seen.insert(v.video_id).second) throw std::invalid_argument("duplicate video id " + v.video_id);
    if (need_captions && v.captions.empty()) throw std::invalid_argument("video " + v.video_id + " has no captions");
  }
}

namespace {

std::size_t features_payload(const json& h) {
  const std::size_t d = h.at("d").get<std::size_t>();
  std::size_t frames = 0;
  for (const auto& n : h.at("n_frames")) frames += n.get<std::size_t>();
  return frames * d;
}

}  // namespace

void save_features(const std::filesystem::path& path, const Dataset& data) {
  data.validate(false);
  Container c;
  c.header = {{"version", kFeaturesFormatVersion}, {"split", data.split}, {"d", data.width()}};
  json ids = json::array(), frames = json::array(), masks = json::array();
  for (const auto& v : data.videos) {
    ids.push_back(v.video_id);
    frames.push_back(v.feats.frames());
    masks.push_back(v.feats.mask);
    c.payload.insert(c.payload.end(), v.feats.features.values().begin(), v.feats.features.values().end());
  }
  c.header["video_ids"] = std::move(ids);
  c.header["n_frames"] = std::move(frames);
  c.header["masks"] = std::move(masks);
  write_container(path, kFeaturesMagic, c);
}

Dataset load_features(const std::filesystem::path& path, std::size_t expected_width) {
  using K = FormatError::Kind;
  Container c = read_container(path, kFeaturesMagic, kFeaturesFormatVersion, features_payload);
  Dataset data;
  try {
    const auto& h = c.header;
    const std::size_t d = h.at("d").get<std::size_t>();
    data.split = h.value("split", std::string{});
    if (h.at("video_ids").empty()) return data;
    if (expected_width != 0 && d != expected_width)
      throw FormatError(K::width_mismatch, "width mismatch: file has d=" + std::to_string(d) + ", expected " +
                                               std::to_string(expected_width));
    const auto ids = h.at("video_ids").get<std::vector<std::string>>();
    const auto frames = h.at("n_frames").get<std::vector<std::size_t>>();
    if (ids.size() != frames.size()) throw FormatError(K::malformed_header, "malformed header: id/frame count mismatch");
    std::vector<std::vector<double>> masks;
    if (h.contains("masks")) {
      masks = h["masks"].get<std::vector<std::vector<double>>>();
      if (masks.size() != ids.size()) throw FormatError(K::malformed_header, "malformed header: mask count mismatch");
    }
    if (d == 0) throw FormatError(K::malformed_header, "malformed header: d must be positive");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t n = frames[i];
      if (n == 0) throw FormatError(K::malformed_header, "malformed header: video " + ids[i] + " has no frames");
      std::vector<double> vals(c.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                               c.payload.begin() + static_cast<std::ptrdiff_t>(offset + n * d));
      offset += n * d;
      Tensor t(Shape{n, d}, std::move(vals));
      FeatureSequence fs = masks.empty() ? FeatureSequence(std::move(t)) : FeatureSequence(std::move(t), masks[i]);
      data.videos.push_back(Video{ids[i], std::move(fs), {}});
    }
    data.validate(false);
  } catch (const json::exception& e) {
    throw FormatError(K::malformed_header, std::string("malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(K::malformed_header, std::string("malformed header: ") + e.what());
  }
  return data;
}

void save_captions(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& v : data.videos)
    for (const auto& c : v.captions) out << json{{"video_id", v.video_id}, {"caption", c}}.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::map<std::string, std::vector<std::string>> load_captions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::map<std::string, std::vector<std::string>> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      auto& dst = out[j.at("video_id").get<std::string>()];
      if (j.contains("captions")) {
        for (const auto& c : j["captions"]) dst.push_back(c.get<std::string>());
      } else {
        dst.push_back(j.at("caption").get<std::string>());
      }
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void attach_captions(Dataset& data, const std::map<std::string, std::vector<std::string>>& captions) {
  for (auto& v : data.videos) {
    auto it = captions.find(v.video_id);
    if (it == captions.end() || it->second.empty())
      throw std::invalid_argument("no captions for video " + v.video_id);
    v.captions = it->second;
  }
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& captions, std::size_t cap) {
  if (cap == 0) throw std::invalid_argument("build_vocab: cap must be at least 1");
  if (captions.empty()) throw std::invalid_argument("build_vocab: no captions");
  const std::set<std::string> reserved{"<pad>", "<bos>", "<eos>", "<unk>"};
  std::map<std::string, std::size_t> freq;
  for (const auto& cap_tokens : captions)
    for (const auto& t : cap_tokens)
      if (!reserved.count(t)) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > cap) ranked.resize(cap);
  std::vector<std::string> words;
  for (auto& [w, n] : ranked) words.push_back(w);
  return Vocabulary(std::move(words));
}

std::vector<Example> make_examples(const Dataset& data, const Vocabulary& vocab, std::size_t max_tokens) {
  std::vector<Example> out;
  for (const auto& v : data.videos)
    for (const auto& text : v.captions) {
      const auto tokens = preprocess_caption(text);
      if (tokens.size() - 1 > max_tokens) continue;
      out.push_back(Example{v.video_id, v.feats, vocab.encode(tokens)});
    }
  return out;
}

namespace {

const std::array<std::string, 16> kObjects{"cat",   "dog",  "man",   "woman", "horse", "bird", "girl",  "boy",
                                           "child", "lion", "tiger", "monkey", "panda", "duck", "rabbit", "fish"};
const std::array<std::string, 16> kActions{"jump",  "push",  "walk",  "eat",   "play", "sing", "look",  "fly",
                                           "climb", "sleep", "turn",  "cook",  "read", "draw", "throw", "kick"};

}  // namespace

const std::string& synthetic_object(std::size_t i) {
  if (i >= kObjects.size()) throw std::out_of_range("synthetic object index " + std::to_string(i));
  return kObjects[i];
}

const std::string& synthetic_action(std::size_t i) {
  if (i >= kActions.size()) throw std::out_of_range("synthetic action index " + std::to_string(i));
  return kActions[i];
}

namespace {

std::vector<double> symbol_vector(const SyntheticSpec& spec, std::uint64_t stream, std::size_t index) {
  Rng rng(derive_seed(derive_seed(spec.seed, stream), index));
  std::vector<double> v(spec.width);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

std::vector<double> synthetic_prototype(const SyntheticSpec& spec, std::size_t object, std::size_t action) {
  auto p = symbol_vector(spec, 1, object);
  const auto a = symbol_vector(spec, 2, action);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += a[i];
  return p;
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.objects == 0 || spec.objects > kObjects.size())
    throw std::invalid_argument("synthetic objects must be in 1.." + std::to_string(kObjects.size()));
  if (spec.actions == 0 || spec.actions > kActions.size())
    throw std::invalid_argument("synthetic actions must be in 1.." + std::to_string(kActions.size()));
  if (spec.frames == 0 || spec.width == 0 || spec.samples == 0)
    throw std::invalid_argument("synthetic frames, width and samples must be positive");
  if (spec.noise < 0.0) throw std::invalid_argument("synthetic noise must be nonnegative");

  std::set<std::pair<std::size_t, std::size_t>> held(spec.held_out_pairs.begin(), spec.held_out_pairs.end());
  std::vector<std::pair<std::size_t, std::size_t>> allowed;
  for (std::size_t o = 0; o < spec.objects; ++o)
    for (std::size_t a = 0; a < spec.actions; ++a) {
      if (!held.count({o, a})) allowed.emplace_back(o, a);
    }
  for (const auto& [o, a] : held)
    if (o >= spec.objects || a >= spec.actions) throw std::invalid_argument("held-out pair out of range");
  if (allowed.empty()) throw std::invalid_argument("every (object, action) pair is held out");

  Rng rng(derive_seed(spec.seed, 3));
  SyntheticData out;
  auto make = [&](const std::string& id, std::size_t o, std::size_t a) {
    const auto proto = synthetic_prototype(spec, o, a);
    Tensor f(Shape{spec.frames, spec.width});
    for (std::size_t k = 0; k < spec.frames; ++k)
      for (std::size_t j = 0; j < spec.width; ++j) f.at(k, j) = proto[j] + rng.normal(0.0, spec.noise);
    out.labels[id] = {o, a};
    return Video{id, FeatureSequence(std::move(f)), {"a " + kObjects[o] + " is " + kActions[a] + "ing"}};
  };

  const std::size_t rest = spec.samples - spec.samples * 9 / 10;
  const std::size_t n_val = rest / 2;
  const std::size_t n_train = spec.samples - rest;
  out.train.split = "train";
  out.val.split = "val";
  out.test.split = "test";
  out.held_out.split = "held_out";
  const auto width = std::to_string(spec.samples - 1).size();
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const auto [o, a] = allowed[rng.below(allowed.size())];
    std::string id = std::to_string(i);
    id = "syn" + std::string(width - id.size(), '0') + id;
    Dataset& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.videos.push_back(make(id, o, a));
  }
  std::size_t h = 0;
  for (const auto& [o, a] : held) out.held_out.videos.push_back(make("held" + std::to_string(h++), o, a));
  return out;
}

}  // namespace m3
