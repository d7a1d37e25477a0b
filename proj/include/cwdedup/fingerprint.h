#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace cwdedup {

/// 20-byte SHA-1 content digest. The only identity and routing key for
/// chunks and DM-Shard rows; rendered as 40 lowercase hex characters.
class Fingerprint {
 public:
  static constexpr std::size_t kSize = 20;
  using Digest = std::array<std::uint8_t, kSize>;

  Fingerprint() = default;
  explicit Fingerprint(const Digest& digest) : digest_(digest) {}

  static Fingerprint of(std::span<const std::uint8_t> bytes);
  static Fingerprint of(std::string_view text);

  // Returns nullopt unless `hex` is exactly 40 hex digits (either case).
  static std::optional<Fingerprint> from_hex(std::string_view hex);

  std::string hex() const;
  const Digest& digest() const { return digest_; }
  std::span<const std::uint8_t> bytes() const { return digest_; }

  // First 8 bytes as a little-endian integer; digests are uniform so this
  // is a fine hash-table key.
  std::uint64_t prefix64() const {
    std::uint64_t v = 0;
    std::memcpy(&v, digest_.data(), sizeof(v));
    return v;
  }

  friend auto operator<=>(const Fingerprint&, const Fingerprint&) = default;

 private:
  Digest digest_{};
};

}  // namespace cwdedup

template <>
struct std::hash<cwdedup::Fingerprint> {
  std::size_t operator()(const cwdedup::Fingerprint& fp) const noexcept {
    return static_cast<std::size_t>(fp.prefix64());
  }
};
