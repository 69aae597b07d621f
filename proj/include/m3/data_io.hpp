// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "m3/attention.hpp"
#include "m3/decoder.hpp"
#include "m3/model.hpp"

namespace m3 {

/// Lowercases ASCII letters, removes ASCII punctuation, splits on whitespace
/// and appends "<eos>". Throws std::invalid_argument when nothing is left.
std::vector<std::string> preprocess_caption(const std::string& text);

/// Uniformly spaced selection of K rows (indices round(i (n-1) / (K-1))), or
/// all n rows followed by zero rows with mask 0 when n < K.
FeatureSequence sample_frames(const Tensor& features, std::size_t k);

struct Video {
  std::string video_id;
  FeatureSequence feats;
  std::vector<std::string> captions;  // raw text

  friend bool operator==(const Video&, const Video&) = default;
};

struct Dataset {
  std::string split;  // "train", "val", "test" or empty
  std::vector<Video> videos;

  /// Feature width shared by all videos, 0 when empty.
  std::size_t width() const { return videos.empty() ? 0 : videos.front().feats.width(); }
  /// Throws std::invalid_argument on mixed widths, duplicate ids or (when
  /// `need_captions`) videos without captions.
  void validate(bool need_captions) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr int kFeaturesFormatVersion = 1;

/// Header {version, split, d, video_ids, n_frames, masks}; payload holds the
/// frames of every video in order. Captions are not stored.
void save_features(const std::filesystem::path& path, const Dataset& data);
/// `expected_width` of 0 accepts any width. A file with no videos loads as an
/// empty dataset whatever its width.
Dataset load_features(const std::filesystem::path& path, std::size_t expected_width = 0);

/// Line-delimited JSON, one {video_id, caption} object per caption.
void save_captions(const std::filesystem::path& path, const Dataset& data);
/// Also accepts {video_id, captions: [...]} lines. Repeated ids accumulate.
std::map<std::string, std::vector<std::string>> load_captions(const std::filesystem::path& path);
/// Attaches captions by id; throws if a video has none.
void attach_captions(Dataset& data, const std::map<std::string, std::vector<std::string>>& captions);

/// The `cap` most frequent tokens (ties lexicographic). Reserved tokens are
/// never counted.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& captions, std::size_t cap);

/// One training example per caption, skipping captions longer than
/// `max_tokens` words (EOS excluded).
std::vector<Example> make_examples(const Dataset& data, const Vocabulary& vocab, std::size_t max_tokens);

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t objects = 8;
  std::size_t actions = 8;
  std::size_t frames = 8;   // K
  std::size_t width = 32;   // d
  std::size_t samples = 72;
  double noise = 0.05;
  /// Pairs (object, action) never drawn for train/val/test; one video per
  /// pair goes to `held_out` instead.
  std::vector<std::pair<std::size_t, std::size_t>> held_out_pairs;
};

struct SyntheticData {
  Dataset train, val, test, held_out;
  /// (object, action) of every video, keyed by video id.
  std::map<std::string, std::pair<std::size_t, std::size_t>> labels;
};

const std::string& synthetic_object(std::size_t i);
const std::string& synthetic_action(std::size_t i);

/// Prototype for (object, action): the sum of a per-object and a per-action
/// standard normal vector, both fixed by the seed.
std::vector<double> synthetic_prototype(const SyntheticSpec& spec, std::size_t object, std::size_t action);

/// Each video is K copies of its pair's prototype plus N(0, noise^2) noise,
/// captioned "a <object> is <action>ing". The first 90% of samples are train,
/// the rest split evenly between val and test.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace m3
