#include "cwdedup/chunking.h"

#include <openssl/evp.h>

#include <algorithm>
#include <array>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

Fingerprint Fingerprint::of(std::span<const std::uint8_t> bytes) {
  Digest digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha1(),
                 nullptr) != 1 ||
      len != kSize) {
    throw std::runtime_error("EVP_Digest(sha1) failed");
  }
  return Fingerprint(digest);
}

Fingerprint Fingerprint::of(std::string_view text) {
  return of(std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                      text.size()));
}

std::optional<Fingerprint> Fingerprint::from_hex(std::string_view hex) {
  if (hex.size() != 2 * kSize) return std::nullopt;
  Digest digest{};
  for (std::size_t i = 0; i < kSize; ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    digest[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return Fingerprint(digest);
}

std::string Fingerprint::hex() const {
  std::string out(2 * kSize, '0');
  for (std::size_t i = 0; i < kSize; ++i) {
    out[2 * i] = kHexDigits[digest_[i] >> 4];
    out[2 * i + 1] = kHexDigits[digest_[i] & 0x0f];
  }
  return out;
}

std::vector<Chunk> split_object(std::span<const std::uint8_t> data,
                                std::size_t chunk_size) {
  if (chunk_size == 0) {
    throw Error(Errc::kInvalidArgument, "chunk_size must be positive");
  }
  std::vector<Chunk> chunks;
  chunks.reserve((data.size() + chunk_size - 1) / chunk_size);
  for (std::size_t off = 0; off < data.size(); off += chunk_size) {
    const std::size_t len = std::min(chunk_size, data.size() - off);
    chunks.push_back(Chunk{off, data.subspan(off, len)});
  }
  return chunks;
}

Fingerprint fingerprint_chunk(std::span<const std::uint8_t> chunk) {
  return Fingerprint::of(chunk);
}

Fingerprint fingerprint_object_name(std::string_view name) {
  if (name.empty()) {
    throw Error(Errc::kInvalidArgument, "object name must be non-empty");
  }
  return Fingerprint::of(name);
}

}  // namespace cwdedup
