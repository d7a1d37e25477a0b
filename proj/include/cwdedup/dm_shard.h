#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cwdedup/fingerprint.h"
#include "cwdedup/record_log.h"

namespace cwdedup {

enum class CommitFlag : std::uint8_t { kInvalid = 0, kValid = 1 };

/// Chunk Information Table row.
struct CitEntry {
  Fingerprint chunk_fp;
  std::uint64_t refcount = 0;
  CommitFlag flag = CommitFlag::kInvalid;

  friend bool operator==(const CitEntry&, const CitEntry&) = default;
};

/// Object Map row. Its presence is the object's commit point.
struct OmapEntry {
  Fingerprint object_fp;
  std::string object_name;
  std::vector<Fingerprint> chunk_fps;
  std::uint64_t logical_size = 0;

  friend bool operator==(const OmapEntry&, const OmapEntry&) = default;
};

// ---------------------------------------------------------------------------
// Canonical record encoding: version byte, op byte, then the fields listed by
// the op's schema in order. Integers little-endian; strings and lists are
// u32-length-prefixed.

namespace shard_codec {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kOpPut = 1;
inline constexpr std::uint8_t kOpErase = 2;

enum class FieldType { kU8, kU32, kU64, kFingerprint, kString, kFingerprintList };

struct FieldSpec {
  std::string_view name;
  FieldType type;
};

enum class Table { kCit, kOmap };

// Field layout for a table/op pair; throws kShardIo for an unknown op.
std::span<const FieldSpec> schema(Table table, std::uint8_t op);

std::vector<std::uint8_t> encode_cit_put(const CitEntry& entry);
std::vector<std::uint8_t> encode_cit_erase(const Fingerprint& fp);
std::vector<std::uint8_t> encode_omap_put(const OmapEntry& entry);
std::vector<std::uint8_t> encode_omap_erase(const Fingerprint& object_fp);

// Schema-driven walk over a payload: checks the version, selects the op's
// schema and verifies the payload holds exactly those fields. Returns the
// fields visited.
std::vector<FieldSpec> walk(Table table, std::span<const std::uint8_t> payload);

}  // namespace shard_codec

// ---------------------------------------------------------------------------

struct ShardWriteCounters {
  std::uint64_t cit_writes = 0;
  std::uint64_t omap_writes = 0;
};

/// Per-node DM-Shard: CIT and OMAP, each backed by its own record log plus a
/// compacted snapshot, with an in-memory index rebuilt on open.
///
/// Every mutating call persists exactly one record before returning, so a
/// crash leaves each row either fully updated or untouched. Not thread-safe;
/// a shard is owned by a single node actor.
class DmShard {
 public:
  struct Options {
    // Compact a table once its log holds this many records.
    std::size_t compact_after = 8192;
  };

  // Invoked after each persisted record: (table, op, key).
  using PersistObserver = std::function<void(std::string_view table,
                                             std::string_view op,
                                             const Fingerprint& key)>;

  explicit DmShard(std::filesystem::path root) : DmShard(std::move(root), {}) {}
  DmShard(std::filesystem::path root, Options options);

  void set_observer(PersistObserver observer) { observer_ = std::move(observer); }

  std::optional<CitEntry> cit_lookup(const Fingerprint& fp) const;
  CitEntry cit_create(const Fingerprint& fp);
  CitEntry cit_increment(const Fingerprint& fp);
  CitEntry cit_decrement(const Fingerprint& fp);
  // Returns true if the stored flag changed.
  bool cit_set_flag(const Fingerprint& fp, CommitFlag flag);
  // Raw upsert/erase, used by relocation, reconciliation and GC.
  void cit_put(const CitEntry& entry);
  void cit_erase(const Fingerprint& fp);
  std::vector<std::pair<Fingerprint, std::uint64_t>> cit_scan_invalid() const;

  void omap_put(const OmapEntry& entry);
  // Leaves a torn OMAP record of `prefix` bytes on disk, the on-disk effect
  // of a crash in the middle of omap_put. The in-memory index is untouched.
  void omap_put_torn(const OmapEntry& entry, std::size_t prefix);
  std::optional<OmapEntry> omap_get(const Fingerprint& object_fp) const;
  void omap_delete(const Fingerprint& object_fp);

  const std::unordered_map<Fingerprint, CitEntry>& cit() const { return cit_; }
  const std::unordered_map<Fingerprint, OmapEntry>& omap() const { return omap_; }
  const ShardWriteCounters& counters() const { return counters_; }
  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path cit_log_path() const { return root_ / "cit.log"; }
  std::filesystem::path omap_log_path() const { return root_ / "omap.log"; }
  std::filesystem::path cit_snap_path() const { return root_ / "cit.snap"; }
  std::filesystem::path omap_snap_path() const { return root_ / "omap.snap"; }

 private:
  void load();
  void append_cit(std::vector<std::uint8_t> payload, std::string_view op,
                  const Fingerprint& key);
  void append_omap(std::vector<std::uint8_t> payload, std::string_view op,
                   const Fingerprint& key);
  void maybe_compact_cit();
  void maybe_compact_omap();
  CitEntry& existing(const Fingerprint& fp);

  std::filesystem::path root_;
  Options options_;
  std::unordered_map<Fingerprint, CitEntry> cit_;
  std::unordered_map<Fingerprint, OmapEntry> omap_;
  std::optional<RecordLog> cit_log_;
  std::optional<RecordLog> omap_log_;
  ShardWriteCounters counters_;
  PersistObserver observer_;
};

}  // namespace cwdedup
