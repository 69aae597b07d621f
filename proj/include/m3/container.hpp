// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace m3 {

/// Errors raised while reading a container file. `kind` lets callers
/// distinguish failure modes without parsing the message.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, malformed_header, unsupported_version, width_mismatch, truncated_payload };
  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using Magic = std::array<char, 8>;

inline constexpr Magic kParamsMagic{'M', '3', 'P', 'A', 'R', 'A', 'M', 'S'};
inline constexpr Magic kFeaturesMagic{'M', '3', 'F', 'E', 'A', 'T', 'S', '\0'};

/// Container layout (see docs/formats.md):
///   bytes [0, 8)        magic
///   bytes [8, 16)       header length L, unsigned 64-bit little-endian
///   bytes [16, 16 + L)  UTF-8 JSON header
///   remainder           payload, IEEE-754 binary64 little-endian
struct Container {
  nlohmann::json header;
  std::vector<double> payload;
};

void write_container(const std::filesystem::path& path, const Magic& magic, const Container& c);

/// Reads and validates the framing. `expected_payload` is derived from the
/// header by the caller-supplied function so truncation is reported before
/// any payload parsing. The header must carry "version" equal to
/// `supported_version`.
Container read_container(const std::filesystem::path& path, const Magic& magic, int supported_version,
                         std::size_t (*expected_payload)(const nlohmann::json&));

}  // namespace m3
