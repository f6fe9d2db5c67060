#pragma once

#include "comen/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace comen {

inline constexpr char kCheckpointMagic[] = "COMENCK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   "COMENCK1" | u32 version | u32 entry count |
///   per entry: u32 name length, name bytes, u32 rank, rank x u32 dims,
///              prod(dims) x f64 values |
///   u32 CRC32 of everything between the magic and the checksum.
/// Entries are written in name order, so equal states give equal bytes.
std::vector<std::uint8_t> serialize_checkpoint(const StateDict& state);

/// Throws MalformedHeaderError (magic, version), TruncatedPayloadError (file
/// ends early) or ChecksumError (CRC mismatch or trailing bytes).
StateDict deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const StateDict& state, const std::filesystem::path& path);
StateDict read_checkpoint(const std::filesystem::path& path);

}  // namespace comen
