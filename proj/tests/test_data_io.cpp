// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "m3/container.hpp"
#include "m3/data_io.hpp"
#include "support.hpp"

using namespace m3;
using Tokens = std::vector<std::string>;

namespace {

FormatError::Kind load_error(const std::filesystem::path& p, std::size_t width = 0) {
  try {
    load_features(p, width);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("expected a FormatError");
  return FormatError::Kind::io;
}

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("preprocess_caption") {
  CHECK(preprocess_caption("A man is Running.") == Tokens{"a", "man", "is", "running", "<eos>"});
  CHECK(preprocess_caption("Hello, world!") == Tokens{"hello", "world", "<eos>"});
  CHECK(preprocess_caption("  two\tspaces\n here ") == Tokens{"two", "spaces", "here", "<eos>"});
  CHECK(preprocess_caption("don't stop") == Tokens{"dont", "stop", "<eos>"});
  CHECK(preprocess_caption("Café ÉTÉ") == Tokens{"café", "ÉtÉ", "<eos>"});
  CHECK_THROWS_AS(preprocess_caption("!!!"), std::invalid_argument);
  CHECK_THROWS_AS(preprocess_caption("   "), std::invalid_argument);
}

TEST_CASE("sample_frames") {
  Tensor f(Shape{9, 2});
  for (std::size_t i = 0; i < 9; ++i) f.at(i, 0) = f.at(i, 1) = static_cast<double>(i);

  SUBCASE("n equal to K keeps every row") {
    Tensor g(Shape{4, 2});
    for (std::size_t i = 0; i < 8; ++i) g[i] = static_cast<double>(i);
    const FeatureSequence s = sample_frames(g, 4);
    CHECK(s.features == g);
    CHECK(s.mask == std::vector<double>(4, 1.0));
  }
  SUBCASE("short videos are padded with masked zero rows") {
    const FeatureSequence s = sample_frames(Tensor::matrix(2, 2, {1, 2, 3, 4}), 4);
    CHECK(s.features == Tensor::matrix(4, 2, {1, 2, 3, 4, 0, 0, 0, 0}));
    CHECK(s.mask == std::vector<double>{1, 1, 0, 0});
    CHECK(s.valid_frames() == 2);
  }
  SUBCASE("nine frames down to three") {
    const FeatureSequence s = sample_frames(f, 3);
    CHECK(s.features.at(0, 0) == 0.0);
    CHECK(s.features.at(1, 0) == 4.0);
    CHECK(s.features.at(2, 0) == 8.0);
  }
  SUBCASE("a single frame takes the first row") { CHECK(sample_frames(f, 1).features.at(0, 0) == 0.0); }
  SUBCASE("always K rows with a consistent mask") {
    for (std::size_t n = 1; n <= 12; ++n)
      for (std::size_t k = 1; k <= 12; ++k) {
        Tensor g(Shape{n, 3}, 1.0);
        const FeatureSequence s = sample_frames(g, k);
        CHECK(s.frames() == k);
        CHECK(s.valid_frames() == std::min(n, k));
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < 3; ++j) CHECK(s.features.at(i, j) == s.mask[i]);
      }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(sample_frames(f, 0), std::invalid_argument);
    CHECK_THROWS_AS(sample_frames(Tensor(Shape{0, 2}), 3), std::invalid_argument);
  }
}

TEST_CASE("synthetic task") {
  const SyntheticSpec spec;
  const SyntheticData a = gen_synthetic(spec), b = gen_synthetic(spec);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK(a.labels == b.labels);
  SyntheticSpec other = spec;
  other.seed = 2;
  CHECK(gen_synthetic(other).train != a.train);

  CHECK(a.train.videos.size() == 64);
  CHECK(a.val.videos.size() == 4);
  CHECK(a.test.videos.size() == 4);
  CHECK(a.held_out.videos.empty());
  CHECK(a.train.videos.front().video_id == "syn00");
  CHECK(a.test.videos.back().video_id == "syn71");
  CHECK(a.train.width() == 32);
  CHECK(a.train.videos.front().feats.frames() == 8);

  for (const Dataset* d : {&a.train, &a.val, &a.test})
    for (const Video& v : d->videos) {
      const auto [o, act] = a.labels.at(v.video_id);
      CHECK(v.captions == std::vector<std::string>{"a " + synthetic_object(o) + " is " + synthetic_action(act) + "ing"});
    }
}

TEST_CASE("synthetic videos of the same pair share a prototype and differ by noise") {
  const SyntheticSpec spec;
  const SyntheticData data = gen_synthetic(spec);
  const Video* first = nullptr;
  const Video* second = nullptr;
  for (const Video& v : data.train.videos) {
    for (const Video& w : data.train.videos)
      if (&v != &w && data.labels.at(v.video_id) == data.labels.at(w.video_id)) {
        first = &v;
        second = &w;
        break;
      }
    if (first) break;
  }
  REQUIRE(first);
  const auto [o, act] = data.labels.at(first->video_id);
  CHECK(synthetic_prototype(spec, o, act) == synthetic_prototype(spec, o, act));
  CHECK(first->feats.features != second->feats.features);
  const auto proto = synthetic_prototype(spec, o, act);
  for (const Video* v : {first, second})
    for (std::size_t k = 0; k < spec.frames; ++k)
      for (std::size_t j = 0; j < spec.width; ++j) CHECK(std::abs(v->feats.features.at(k, j) - proto[j]) < 6 * spec.noise);
}

TEST_CASE("nearest prototype recovers every synthetic label") {
  SyntheticSpec spec;
  spec.held_out_pairs = {{0, 1}, {1, 4}, {2, 7}};
  const SyntheticData data = gen_synthetic(spec);
  std::size_t hits = 0, total = 0;
  for (const Dataset* d : {&data.train, &data.val, &data.test, &data.held_out})
    for (const Video& v : d->videos) {
      std::vector<double> mean(spec.width, 0.0);
      for (std::size_t k = 0; k < spec.frames; ++k)
        for (std::size_t j = 0; j < spec.width; ++j) mean[j] += v.feats.features.at(k, j) / spec.frames;
      std::pair<std::size_t, std::size_t> best{0, 0};
      double best_d = 1e300;
      for (std::size_t o = 0; o < spec.objects; ++o)
        for (std::size_t a = 0; a < spec.actions; ++a) {
          const double d2 = dist2(mean, synthetic_prototype(spec, o, a));
          if (d2 < best_d) {
            best_d = d2;
            best = {o, a};
          }
        }
      hits += best == data.labels.at(v.video_id);
      ++total;
    }
  CHECK(total == 75);
  CHECK(hits == total);
}

TEST_CASE("held-out pairs only appear in the held-out split") {
  SyntheticSpec spec;
  spec.held_out_pairs = {{0, 1}, {3, 2}};
  const SyntheticData data = gen_synthetic(spec);
  for (const Dataset* d : {&data.train, &data.val, &data.test})
    for (const Video& v : d->videos) {
      CHECK(data.labels.at(v.video_id) != std::pair<std::size_t, std::size_t>{0, 1});
      CHECK(data.labels.at(v.video_id) != std::pair<std::size_t, std::size_t>{3, 2});
    }
  REQUIRE(data.held_out.videos.size() == 2);
  CHECK(data.held_out.videos[0].video_id == "held0");
  CHECK(data.held_out.videos[0].captions.front() == "a " + synthetic_object(0) + " is " + synthetic_action(1) + "ing");
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s;
  s.objects = 0;
  CHECK_THROWS_AS(gen_synthetic(s), std::invalid_argument);
  s = {};
  s.actions = 17;
  CHECK_THROWS_AS(gen_synthetic(s), std::invalid_argument);
  s = {};
  s.noise = -1.0;
  CHECK_THROWS_AS(gen_synthetic(s), std::invalid_argument);
  s = {};
  s.objects = s.actions = 1;
  s.held_out_pairs = {{0, 0}};
  CHECK_THROWS_AS(gen_synthetic(s), std::invalid_argument);
}

TEST_CASE("feature files") {
  testing::TempDir dir;
  SyntheticSpec spec;
  spec.samples = 10;
  Dataset data = gen_synthetic(spec).train;
  data.videos[1].feats = sample_frames(Tensor(Shape{3, 32}, 0.5), 8);
  const auto path = dir / "train.feats";
  save_features(path, data);

  SUBCASE("round trip without captions") {
    Dataset expected = data;
    for (auto& v : expected.videos) v.captions.clear();
    CHECK(load_features(path) == expected);
    CHECK(load_features(path, 32) == expected);
  }
  SUBCASE("width mismatch") {
    CHECK(load_error(path, 16) == FormatError::Kind::width_mismatch);
  }
  SUBCASE("truncated payload") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    CHECK(load_error(path) == FormatError::Kind::truncated_payload);
  }
  SUBCASE("unsupported version") {
    Container c;
    c.header = {{"version", 99}, {"d", 1}, {"video_ids", {"v"}}, {"n_frames", {1}}};
    c.payload = {1.0};
    write_container(dir / "v99.feats", kFeaturesMagic, c);
    CHECK(load_error(dir / "v99.feats") == FormatError::Kind::unsupported_version);
  }
  SUBCASE("bad magic") {
    std::ofstream(dir / "bad.feats", std::ios::binary) << "NOTFEATS\x02\0\0\0\0\0\0\0{}";
    CHECK(load_error(dir / "bad.feats") == FormatError::Kind::bad_magic);
  }
  SUBCASE("malformed header") {
    Container c;
    c.header = {{"version", 1}, {"d", 2}, {"video_ids", {"a", "b"}}, {"n_frames", {1}}};
    c.payload = {1.0, 2.0};
    write_container(dir / "mal.feats", kFeaturesMagic, c);
    CHECK(load_error(dir / "mal.feats") == FormatError::Kind::malformed_header);
  }
  SUBCASE("missing file") { CHECK(load_error(dir / "nope.feats") == FormatError::Kind::io); }
}

TEST_CASE("caption files") {
  testing::TempDir dir;
  SyntheticSpec spec;
  spec.samples = 10;
  const Dataset data = gen_synthetic(spec).train;
  save_captions(dir / "c.jsonl", data);
  const auto loaded = load_captions(dir / "c.jsonl");
  CHECK(loaded.size() == data.videos.size());
  Dataset bare = data;
  for (auto& v : bare.videos) v.captions.clear();
  attach_captions(bare, loaded);
  CHECK(bare == data);

  std::ofstream(dir / "multi.jsonl") << R"({"video_id": "v1", "captions": ["one", "two"]})" << "\n\n"
                                     << R"({"video_id": "v1", "caption": "three"})" << "\n";
  CHECK(load_captions(dir / "multi.jsonl").at("v1") == std::vector<std::string>{"one", "two", "three"});

  std::ofstream(dir / "broken.jsonl") << R"({"video_id": "v1", "caption": "x"})" << "\n{oops\n";
  try {
    load_captions(dir / "broken.jsonl");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("broken.jsonl:2") != std::string::npos);
  }

  Dataset missing = bare;
  missing.videos.push_back({"extra", missing.videos.front().feats, {}});
  CHECK_THROWS_AS(attach_captions(missing, loaded), std::invalid_argument);
}

TEST_CASE("build_vocab") {
  const Vocabulary v = build_vocab({{"a", "b"}, {"a"}}, 1);
  CHECK(v.words() == Tokens{"a"});
  CHECK(v.id("b") == kUnk);
  CHECK(build_vocab({{"y", "x"}}, 1).words() == Tokens{"x"});
  CHECK(build_vocab({{"b", "c", "c", "a", "<eos>"}}, 10).words() == Tokens{"c", "a", "b"});
  const Vocabulary all = build_vocab({{"b", "c", "c", "a"}}, 3);
  for (const auto& w : {"a", "b", "c"}) CHECK(all.id(w) != kUnk);
  CHECK_THROWS_AS(build_vocab({}, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_vocab({{"a"}}, 0), std::invalid_argument);
}

TEST_CASE("encoding then decoding in-vocabulary captions is the identity") {
  const SyntheticData data = gen_synthetic({});
  std::vector<Tokens> tokenized;
  for (const Video& v : data.train.videos) tokenized.push_back(preprocess_caption(v.captions.front()));
  const Vocabulary vocab = build_vocab(tokenized, 100);
  for (Tokens t : tokenized) {
    t.pop_back();
    CHECK(vocab.decode(vocab.encode(t)) == t);
  }
}

TEST_CASE("make_examples") {
  Dataset d;
  d.videos.push_back({"v", FeatureSequence(Tensor(Shape{2, 3}, 1.0)), {"A dog runs", "a very long caption here", "dog"}});
  const Vocabulary vocab({"a", "dog", "runs"});
  const auto ex = make_examples(d, vocab, 3);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].caption == std::vector<TokenId>{4, 5, 6, kEos});
  CHECK(ex[1].caption == std::vector<TokenId>{5, kEos});
  CHECK(ex[0].video_id == "v");
  CHECK(ex[0].feats == d.videos[0].feats);
}
