#include "cwdedup/chunk_store.h"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "cwdedup/error.h"

namespace cwdedup {

namespace fs = std::filesystem;

ChunkStore::ChunkStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) {
    throw Error(Errc::kShardIo,
                fmt::format("create {}: {}", root_.string(), ec.message()));
  }
  for (const auto& dir : fs::directory_iterator(root_)) {
    if (!dir.is_directory()) continue;
    for (const auto& file : fs::directory_iterator(dir.path())) {
      const auto name = file.path().filename().string();
      auto fp = Fingerprint::from_hex(name);
      if (!fp) {
        // Leftover temp file from a crash before rename.
        fs::remove(file.path(), ec);
        continue;
      }
      const auto size = file.file_size();
      sizes_[*fp] = size;
      bytes_used_ += size;
    }
  }
}

fs::path ChunkStore::path_for(const Fingerprint& fp) const {
  const auto hex = fp.hex();
  return root_ / hex.substr(0, 2) / hex;
}

bool ChunkStore::contains(const Fingerprint& fp) const {
  std::error_code ec;
  return fs::is_regular_file(path_for(fp), ec);
}

void ChunkStore::put(const Fingerprint& fp, std::span<const std::uint8_t> data) {
  const auto path = path_for(fp);
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(Errc::kShardIo,
                fmt::format("open {}: {}", tmp.string(), std::strerror(errno)));
  }
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw Error(Errc::kShardIo,
                  fmt::format("write {}: {}", tmp.string(), std::strerror(err)));
    }
    done += static_cast<std::size_t>(n);
  }
  ::close(fd);
  fs::rename(tmp, path, ec);
  if (ec) {
    throw Error(Errc::kShardIo,
                fmt::format("rename {}: {}", tmp.string(), ec.message()));
  }
  auto [it, inserted] = sizes_.try_emplace(fp, data.size());
  if (inserted) {
    bytes_used_ += data.size();
  } else {
    bytes_used_ = bytes_used_ - it->second + data.size();
    it->second = data.size();
  }
}

std::optional<std::vector<std::uint8_t>> ChunkStore::read(
    const Fingerprint& fp) const {
  std::ifstream in(path_for(fp), std::ios::binary);
  if (!in) return std::nullopt;
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

bool ChunkStore::erase(const Fingerprint& fp) {
  std::error_code ec;
  const bool removed = fs::remove(path_for(fp), ec);
  if (auto it = sizes_.find(fp); it != sizes_.end()) {
    bytes_used_ -= it->second;
    sizes_.erase(it);
  }
  return removed;
}

std::vector<Fingerprint> ChunkStore::list() const {
  std::vector<Fingerprint> out;
  out.reserve(sizes_.size());
  for (const auto& [fp, size] : sizes_) out.push_back(fp);
  return out;
}

}  // namespace cwdedup
