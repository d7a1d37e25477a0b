#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cwdedup/fingerprint.h"

namespace cwdedup {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kDefaultChunkSize = 512 * 1024;

// A view into the object buffer; chunks never own their bytes.
struct Chunk {
  std::size_t offset = 0;
  std::span<const std::uint8_t> data;

  std::size_t length() const { return data.size(); }
};

// Fixed-size split. Every chunk but the last has exactly `chunk_size`
// bytes; the tail is kept as-is. Empty input yields no chunks.
std::vector<Chunk> split_object(std::span<const std::uint8_t> data,
                                std::size_t chunk_size);

Fingerprint fingerprint_chunk(std::span<const std::uint8_t> chunk);
inline Fingerprint fingerprint_chunk(const Chunk& chunk) {
  return fingerprint_chunk(chunk.data);
}

// Object fingerprint := SHA-1 of the UTF-8 name bytes. Throws
// kInvalidArgument for an empty name.
Fingerprint fingerprint_object_name(std::string_view name);

}  // namespace cwdedup
