#include "comen/checkpoint.hpp"

#include "comen/binary_io.hpp"
#include "comen/data.hpp"
#include "comen/errors.hpp"

#include <cstring>
#include <limits>
#include <string>

namespace comen {

namespace {

constexpr std::size_t kMagicSize = 8;
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const StateDict& state) {
  ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, kMagicSize));
  w.put_u32(kCheckpointVersion);
  w.put_u32(static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, entry] : state) {
    if (numel(entry.shape) != entry.values.size()) {
      throw ShapeError("serialize_checkpoint: entry '" + name + "' has inconsistent shape");
    }
    w.put_u32(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put_u32(static_cast<std::uint32_t>(entry.shape.size()));
    for (Index d : entry.shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < entry.values.size(); ++i) w.put_f64(entry.values[i]);
  }
  w.put_u32(crc32(w.view(kMagicSize)));
  return w.take();
}

StateDict deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kCheckpointMagic, kMagicSize) != 0) {
    throw MalformedHeaderError("checkpoint: missing COMENCK1 magic");
  }
  ByteReader r(bytes.subspan(kMagicSize));
  if (r.remaining() < 8) throw MalformedHeaderError("checkpoint: header shorter than 16 bytes");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw MalformedHeaderError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();

  StateDict state;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_length = r.u32();
    if (name_length == 0 || name_length > kMaxNameLength) {
      throw ChecksumError("checkpoint: implausible entry name length " + std::to_string(name_length));
    }
    std::string name = r.str(name_length);
    const std::uint32_t rank = r.u32();
    if (rank > kMaxRank) throw ChecksumError("checkpoint: implausible rank for '" + name + "'");
    NamedArray entry;
    std::uint64_t count_values = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t dim = r.u32();
      entry.shape.push_back(static_cast<Index>(dim));
      count_values *= dim;
      if (count_values > r.remaining() / 8 + 1) {
        throw TruncatedPayloadError("checkpoint: entry '" + name + "' extends past the end of the file");
      }
    }
    if (count_values * 8 > r.remaining()) {
      throw TruncatedPayloadError("checkpoint: entry '" + name + "' extends past the end of the file");
    }
    entry.values.resize(static_cast<Index>(count_values));
    for (Index i = 0; i < entry.values.size(); ++i) entry.values[i] = r.f64();
    if (!state.emplace(std::move(name), std::move(entry)).second) {
      throw ChecksumError("checkpoint: duplicate entry name");
    }
  }
  const std::size_t body_end = kMagicSize + r.position();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) throw ChecksumError("checkpoint: trailing bytes after checksum");
  if (crc32(bytes.subspan(kMagicSize, body_end - kMagicSize)) != stored) {
    throw ChecksumError("checkpoint: CRC32 mismatch");
  }
  return state;
}

void write_checkpoint(const StateDict& state, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(state));
}

StateDict read_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace comen
