#pragma once

// Shared framing for the .skna / .sknads / .sknamodel files:
//
//   offset 0   8 bytes   magic
//   offset 8   u16 LE    format version
//   offset 10  u32 LE    metadata length M
//   offset 14  M bytes   UTF-8 JSON metadata
//   ...        u64 LE    payload length P (bytes)
//   ...        P bytes   little-endian float32 payload
//   ...        u32 LE    CRC32 over metadata length, metadata, payload length and payload
//
// Readers reject a wrong magic, a different version, a short file and a
// checksum mismatch with distinct error codes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace skna {

using Magic = std::array<char, 8>;

struct Container {
  std::string metadata;
  std::vector<float> payload;
};

std::vector<std::uint8_t> encode_container(const Magic& magic, std::uint16_t version,
                                           const std::string& metadata,
                                           std::span<const float> payload);

Container decode_container(const Magic& magic, std::uint16_t version,
                           std::span<const std::uint8_t> bytes);

// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace skna
