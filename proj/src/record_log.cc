#include "cwdedup/record_log.h"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

constexpr std::size_t kHeaderSize = 8;

std::uint32_t crc_of(std::span<const std::uint8_t> payload) {
  return static_cast<std::uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
}

void put_u32(std::uint8_t* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{in[i]} << (8 * i);
  return v;
}

[[noreturn]] void io_error(const std::string& what,
                           const std::filesystem::path& path) {
  throw Error(Errc::kShardIo, fmt::format("{} {}: {}", what, path.string(),
                                          std::strerror(errno)));
}

}  // namespace

RecordLog::RecordLog(std::filesystem::path path) : path_(std::move(path)) {
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) io_error("open", path_);
}

RecordLog::~RecordLog() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<std::uint8_t> RecordLog::frame(
    std::span<const std::uint8_t> payload) {
  std::vector<std::uint8_t> out(kHeaderSize + payload.size());
  put_u32(out.data(), static_cast<std::uint32_t>(payload.size()));
  put_u32(out.data() + 4, crc_of(payload));
  std::memcpy(out.data() + kHeaderSize, payload.data(), payload.size());
  return out;
}

std::size_t RecordLog::replay(const std::filesystem::path& path,
                              const Visitor& visit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  in.close();

  std::size_t pos = 0;
  std::size_t count = 0;
  while (buf.size() - pos >= kHeaderSize) {
    const std::uint32_t len = get_u32(buf.data() + pos);
    const std::uint32_t crc = get_u32(buf.data() + pos + 4);
    if (buf.size() - pos - kHeaderSize < len) break;
    const std::span<const std::uint8_t> payload(buf.data() + pos + kHeaderSize,
                                                len);
    if (crc_of(payload) != crc) break;
    visit(payload);
    ++count;
    pos += kHeaderSize + len;
  }
  if (pos != buf.size()) {
    std::error_code ec;
    std::filesystem::resize_file(path, pos, ec);
    if (ec) {
      throw Error(Errc::kShardIo, fmt::format("truncate {}: {}", path.string(),
                                              ec.message()));
    }
  }
  return count;
}

void RecordLog::write_snapshot(
    const std::filesystem::path& path,
    std::span<const std::vector<std::uint8_t>> records) {
  auto tmp = path;
  tmp += ".tmp";
  {
    const int fd =
        ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) io_error("open", tmp);
    std::vector<std::uint8_t> buf;
    for (const auto& r : records) {
      const auto framed = frame(r);
      buf.insert(buf.end(), framed.begin(), framed.end());
    }
    std::size_t done = 0;
    while (done < buf.size()) {
      const ssize_t n = ::write(fd, buf.data() + done, buf.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        ::close(fd);
        io_error("write", tmp);
      }
      done += static_cast<std::size_t>(n);
    }
    ::close(fd);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw Error(Errc::kShardIo,
                fmt::format("rename {}: {}", tmp.string(), ec.message()));
  }
}

void RecordLog::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("write", path_);
    }
    done += static_cast<std::size_t>(n);
  }
}

void RecordLog::append(std::span<const std::uint8_t> payload) {
  write_all(frame(payload));
  ++appended_;
}

void RecordLog::append_torn(std::span<const std::uint8_t> payload,
                            std::size_t prefix) {
  const auto framed = frame(payload);
  write_all(std::span(framed).first(std::min(prefix, framed.size())));
}

void RecordLog::truncate() {
  if (::ftruncate(fd_, 0) != 0) io_error("ftruncate", path_);
  appended_ = 0;
}

}  // namespace cwdedup
