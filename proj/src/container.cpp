// SPDX-License-Identifier: Apache-2.0
#include "m3/container.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

namespace m3 {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

void write_container(const std::filesystem::path& path, const Magic& magic, const Container& c) {
  const std::string header = c.header.dump();
  std::string bytes(magic.begin(), magic.end());
  put_u64(bytes, header.size());
  bytes += header;
  bytes.reserve(bytes.size() + 8 * c.payload.size());
  for (double v : c.payload) put_u64(bytes, std::bit_cast<std::uint64_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path, const Magic& magic, int supported_version,
                         std::size_t (*expected_payload)(const nlohmann::json&)) {
  using K = FormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(K::io, "cannot open: " + path.string());
  const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());

  if (raw.size() < 16 || !std::equal(magic.begin(), magic.end(), raw.begin()))
    throw FormatError(K::bad_magic, "not a recognised container file: " + path.string());
  const std::uint64_t header_len = get_u64(p + 8);
  if (header_len > raw.size() - 16) throw FormatError(K::malformed_header, "malformed header: length exceeds file");

  Container c;
  try {
    c.header = nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::malformed_header, std::string("malformed header: ") + e.what());
  }
  if (!c.header.is_object() || !c.header.contains("version") || !c.header["version"].is_number_integer())
    throw FormatError(K::malformed_header, "malformed header: missing integer \"version\"");
  const int version = c.header["version"].get<int>();
  if (version != supported_version)
    throw FormatError(K::unsupported_version, "unsupported version " + std::to_string(version) + " (expected " +
                                                  std::to_string(supported_version) + ")");

  std::size_t want = 0;
  try {
    want = expected_payload(c.header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::malformed_header, std::string("malformed header: ") + e.what());
  }
  const std::size_t have_bytes = raw.size() - 16 - header_len;
  if (have_bytes < want * 8)
    throw FormatError(K::truncated_payload, "truncated payload: expected " + std::to_string(want) +
                                                " values, found " + std::to_string(have_bytes / 8));
  if (have_bytes != want * 8)
    throw FormatError(K::malformed_header, "malformed header: payload has trailing bytes");

  c.payload.resize(want);
  const unsigned char* q = p + 16 + header_len;
  for (std::size_t i = 0; i < want; ++i) c.payload[i] = std::bit_cast<double>(get_u64(q + 8 * i));
  return c;
}

}  // namespace m3
