#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cwdedup/fingerprint.h"

namespace cwdedup {

// Content-addressed chunk files at <root>/<2-hex>/<40-hex>. Writes go to a
// temp file that is renamed into place, so a chunk file is either complete
// or absent. An index of sizes is rebuilt by scanning the tree on open.
class ChunkStore {
 public:
  explicit ChunkStore(std::filesystem::path root);

  // stat()-style probe against the filesystem, not the index.
  bool contains(const Fingerprint& fp) const;
  void put(const Fingerprint& fp, std::span<const std::uint8_t> data);
  std::optional<std::vector<std::uint8_t>> read(const Fingerprint& fp) const;
  // Returns true if a file was removed; absent files are a no-op.
  bool erase(const Fingerprint& fp);

  std::vector<Fingerprint> list() const;
  std::uint64_t bytes_used() const { return bytes_used_; }
  std::size_t count() const { return sizes_.size(); }
  const std::map<Fingerprint, std::uint64_t>& sizes() const { return sizes_; }

  std::filesystem::path path_for(const Fingerprint& fp) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::map<Fingerprint, std::uint64_t> sizes_;
  std::uint64_t bytes_used_ = 0;
};

}  // namespace cwdedup
