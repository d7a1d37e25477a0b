#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace cwdedup {

// Append-only log of CRC-guarded records, framed as
//   [u32 len][u32 crc32(payload)][payload]
// with little-endian header fields. A record is either fully present or
// treated as absent on replay; a torn tail is truncated away.
class RecordLog {
 public:
  using Visitor = std::function<void(std::span<const std::uint8_t>)>;

  explicit RecordLog(std::filesystem::path path);
  ~RecordLog();
  RecordLog(const RecordLog&) = delete;
  RecordLog& operator=(const RecordLog&) = delete;

  // Visits every intact record of `path` in order and truncates the file at
  // the first torn or corrupt frame. Missing file visits nothing. Returns
  // the number of records visited.
  static std::size_t replay(const std::filesystem::path& path,
                            const Visitor& visit);

  // Atomically replaces `path` with the given records (tmp + rename).
  static void write_snapshot(const std::filesystem::path& path,
                             std::span<const std::vector<std::uint8_t>> records);

  static std::vector<std::uint8_t> frame(std::span<const std::uint8_t> payload);

  void append(std::span<const std::uint8_t> payload);

  // Persists only the first `prefix` bytes of the framed record, as a crash
  // mid-write would.
  void append_torn(std::span<const std::uint8_t> payload, std::size_t prefix);

  void truncate();

  std::size_t appended() const { return appended_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void write_all(std::span<const std::uint8_t> bytes);

  std::filesystem::path path_;
  int fd_ = -1;
  std::size_t appended_ = 0;
};

}  // namespace cwdedup
