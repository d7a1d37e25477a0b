#include "cwdedup/dm_shard.h"

#include <fmt/format.h>

#include <algorithm>
#include <array>

#include "cwdedup/error.h"

namespace cwdedup {

namespace shard_codec {

namespace {

using enum FieldType;

constexpr std::array<FieldSpec, 5> kCitPut{{{"version", kU8},
                                            {"op", kU8},
                                            {"chunk_fp", kFingerprint},
                                            {"refcount", kU64},
                                            {"commit_flag", kU8}}};
constexpr std::array<FieldSpec, 3> kCitErase{
    {{"version", kU8}, {"op", kU8}, {"chunk_fp", kFingerprint}}};
constexpr std::array<FieldSpec, 6> kOmapPut{{{"version", kU8},
                                             {"op", kU8},
                                             {"object_fp", kFingerprint},
                                             {"object_name", kString},
                                             {"logical_size", kU64},
                                             {"chunk_fps", kFingerprintList}}};
constexpr std::array<FieldSpec, 3> kOmapErase{
    {{"version", kU8}, {"op", kU8}, {"object_fp", kFingerprint}}};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void fp(const Fingerprint& f) {
    out_.insert(out_.end(), f.digest().begin(), f.digest().end());
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint32_t u32() {
    const auto b = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
  }
  Fingerprint fp() {
    const auto b = need(Fingerprint::kSize);
    Fingerprint::Digest d{};
    std::copy(b.begin(), b.end(), d.begin());
    return Fingerprint(d);
  }
  std::string str() {
    const auto n = u32();
    const auto b = need(n);
    return std::string(b.begin(), b.end());
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> need(std::size_t n) {
    if (in_.size() - pos_ < n) {
      throw Error(Errc::kShardIo, "record payload truncated");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void expect_header(Reader& r) {
  const auto version = r.u8();
  if (version != kVersion) {
    throw Error(Errc::kShardIo, fmt::format("unknown record version {}", version));
  }
}

}  // namespace

std::span<const FieldSpec> schema(Table table, std::uint8_t op) {
  if (op == kOpPut) return table == Table::kCit ? std::span<const FieldSpec>(kCitPut)
                                                : std::span<const FieldSpec>(kOmapPut);
  if (op == kOpErase) return table == Table::kCit ? std::span<const FieldSpec>(kCitErase)
                                                  : std::span<const FieldSpec>(kOmapErase);
  throw Error(Errc::kShardIo, fmt::format("unknown record op {}", op));
}

std::vector<std::uint8_t> encode_cit_put(const CitEntry& entry) {
  Writer w;
  w.u8(kVersion);
  w.u8(kOpPut);
  w.fp(entry.chunk_fp);
  w.u64(entry.refcount);
  w.u8(static_cast<std::uint8_t>(entry.flag));
  return w.take();
}

std::vector<std::uint8_t> encode_cit_erase(const Fingerprint& fp) {
  Writer w;
  w.u8(kVersion);
  w.u8(kOpErase);
  w.fp(fp);
  return w.take();
}

std::vector<std::uint8_t> encode_omap_put(const OmapEntry& entry) {
  Writer w;
  w.u8(kVersion);
  w.u8(kOpPut);
  w.fp(entry.object_fp);
  w.str(entry.object_name);
  w.u64(entry.logical_size);
  w.u32(static_cast<std::uint32_t>(entry.chunk_fps.size()));
  for (const auto& fp : entry.chunk_fps) w.fp(fp);
  return w.take();
}

std::vector<std::uint8_t> encode_omap_erase(const Fingerprint& object_fp) {
  Writer w;
  w.u8(kVersion);
  w.u8(kOpErase);
  w.fp(object_fp);
  return w.take();
}

std::vector<FieldSpec> walk(Table table, std::span<const std::uint8_t> payload) {
  if (payload.size() < 2) throw Error(Errc::kShardIo, "record payload truncated");
  const auto fields = schema(table, payload[1]);
  Reader r(payload);
  std::vector<FieldSpec> visited;
  for (const auto& f : fields) {
    switch (f.type) {
      case kU8: r.u8(); break;
      case kU32: r.u32(); break;
      case kU64: r.u64(); break;
      case kFingerprint: r.fp(); break;
      case kString: r.str(); break;
      case kFingerprintList: {
        const auto n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) r.fp();
        break;
      }
    }
    visited.push_back(f);
  }
  if (!r.done()) throw Error(Errc::kShardIo, "record has trailing bytes");
  return visited;
}

namespace {

struct CitRecord {
  std::uint8_t op;
  CitEntry entry;
};

struct OmapRecord {
  std::uint8_t op;
  OmapEntry entry;
};

CitRecord decode_cit(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  expect_header(r);
  CitRecord rec{r.u8(), {}};
  rec.entry.chunk_fp = r.fp();
  if (rec.op == kOpPut) {
    rec.entry.refcount = r.u64();
    const auto flag = r.u8();
    if (flag > 1) throw Error(Errc::kShardIo, "bad commit flag");
    rec.entry.flag = static_cast<CommitFlag>(flag);
  } else if (rec.op != kOpErase) {
    throw Error(Errc::kShardIo, "unknown cit op");
  }
  if (!r.done()) throw Error(Errc::kShardIo, "cit record has trailing bytes");
  return rec;
}

OmapRecord decode_omap(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  expect_header(r);
  OmapRecord rec{r.u8(), {}};
  rec.entry.object_fp = r.fp();
  if (rec.op == kOpPut) {
    rec.entry.object_name = r.str();
    rec.entry.logical_size = r.u64();
    const auto n = r.u32();
    rec.entry.chunk_fps.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) rec.entry.chunk_fps.push_back(r.fp());
  } else if (rec.op != kOpErase) {
    throw Error(Errc::kShardIo, "unknown omap op");
  }
  if (!r.done()) throw Error(Errc::kShardIo, "omap record has trailing bytes");
  return rec;
}

}  // namespace

}  // namespace shard_codec

using namespace shard_codec;

DmShard::DmShard(std::filesystem::path root, Options options)
    : root_(std::move(root)), options_(options) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) {
    throw Error(Errc::kShardIo,
                fmt::format("create {}: {}", root_.string(), ec.message()));
  }
  load();
  cit_log_.emplace(cit_log_path());
  omap_log_.emplace(omap_log_path());
}

void DmShard::load() {
  auto apply_cit = [this](std::span<const std::uint8_t> payload) {
    auto rec = shard_codec::decode_cit(payload);
    if (rec.op == kOpPut) {
      cit_[rec.entry.chunk_fp] = rec.entry;
    } else {
      cit_.erase(rec.entry.chunk_fp);
    }
  };
  auto apply_omap = [this](std::span<const std::uint8_t> payload) {
    auto rec = shard_codec::decode_omap(payload);
    if (rec.op == kOpPut) {
      const auto key = rec.entry.object_fp;
      omap_[key] = std::move(rec.entry);
    } else {
      omap_.erase(rec.entry.object_fp);
    }
  };
  // Snapshot then log: log records are whole-row upserts/erases, so replaying
  // a log that was already folded into the snapshot is harmless.
  RecordLog::replay(cit_snap_path(), apply_cit);
  RecordLog::replay(cit_log_path(), apply_cit);
  RecordLog::replay(omap_snap_path(), apply_omap);
  RecordLog::replay(omap_log_path(), apply_omap);
}

void DmShard::append_cit(std::vector<std::uint8_t> payload, std::string_view op,
                         const Fingerprint& key) {
  // Compact before appending: callers update the index only after the
  // record is durable, so the index does not yet hold this record.
  maybe_compact_cit();
  cit_log_->append(payload);
  ++counters_.cit_writes;
  if (observer_) observer_("cit", op, key);
}

void DmShard::append_omap(std::vector<std::uint8_t> payload,
                          std::string_view op, const Fingerprint& key) {
  // Compact before appending: callers update the index only after the
  // record is durable, so the index does not yet hold this record.
  maybe_compact_omap();
  omap_log_->append(payload);
  ++counters_.omap_writes;
  if (observer_) observer_("omap", op, key);
}

void DmShard::maybe_compact_cit() {
  if (cit_log_->appended() < options_.compact_after) return;
  std::vector<std::vector<std::uint8_t>> records;
  records.reserve(cit_.size());
  for (const auto& [fp, entry] : cit_) records.push_back(encode_cit_put(entry));
  RecordLog::write_snapshot(cit_snap_path(), records);
  cit_log_->truncate();
}

void DmShard::maybe_compact_omap() {
  if (omap_log_->appended() < options_.compact_after) return;
  std::vector<std::vector<std::uint8_t>> records;
  records.reserve(omap_.size());
  for (const auto& [fp, entry] : omap_) records.push_back(encode_omap_put(entry));
  RecordLog::write_snapshot(omap_snap_path(), records);
  omap_log_->truncate();
}

CitEntry& DmShard::existing(const Fingerprint& fp) {
  auto it = cit_.find(fp);
  if (it == cit_.end()) {
    throw Error(Errc::kMissingEntry, fmt::format("no CIT entry for {}", fp.hex()));
  }
  return it->second;
}

std::optional<CitEntry> DmShard::cit_lookup(const Fingerprint& fp) const {
  auto it = cit_.find(fp);
  if (it == cit_.end()) return std::nullopt;
  return it->second;
}

CitEntry DmShard::cit_create(const Fingerprint& fp) {
  if (cit_.contains(fp)) {
    throw Error(Errc::kDuplicateCreate,
                fmt::format("CIT entry for {} already exists", fp.hex()));
  }
  const CitEntry entry{fp, 1, CommitFlag::kInvalid};
  append_cit(encode_cit_put(entry), "create", fp);
  cit_[fp] = entry;
  return entry;
}

CitEntry DmShard::cit_increment(const Fingerprint& fp) {
  CitEntry next = existing(fp);
  if (next.flag != CommitFlag::kValid) {
    throw Error(Errc::kInvalidFlag,
                fmt::format("CIT entry for {} has an invalid flag", fp.hex()));
  }
  ++next.refcount;
  append_cit(encode_cit_put(next), "increment", fp);
  return cit_[fp] = next;
}

CitEntry DmShard::cit_decrement(const Fingerprint& fp) {
  CitEntry next = existing(fp);
  if (next.refcount == 0) {
    throw Error(Errc::kInvalidState,
                fmt::format("CIT entry for {} already has refcount 0", fp.hex()));
  }
  if (--next.refcount == 0) next.flag = CommitFlag::kInvalid;
  append_cit(encode_cit_put(next), "decrement", fp);
  return cit_[fp] = next;
}

bool DmShard::cit_set_flag(const Fingerprint& fp, CommitFlag flag) {
  CitEntry next = existing(fp);
  if (next.flag == flag) return false;
  next.flag = flag;
  append_cit(encode_cit_put(next), "set-flag", fp);
  cit_[fp] = next;
  return true;
}

void DmShard::cit_put(const CitEntry& entry) {
  append_cit(encode_cit_put(entry), "put", entry.chunk_fp);
  cit_[entry.chunk_fp] = entry;
}

void DmShard::cit_erase(const Fingerprint& fp) {
  if (!cit_.contains(fp)) return;
  append_cit(encode_cit_erase(fp), "erase", fp);
  cit_.erase(fp);
}

std::vector<std::pair<Fingerprint, std::uint64_t>> DmShard::cit_scan_invalid()
    const {
  std::vector<std::pair<Fingerprint, std::uint64_t>> out;
  for (const auto& [fp, entry] : cit_) {
    if (entry.flag == CommitFlag::kInvalid) out.emplace_back(fp, entry.refcount);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void DmShard::omap_put(const OmapEntry& entry) {
  append_omap(encode_omap_put(entry), "put", entry.object_fp);
  omap_[entry.object_fp] = entry;
}

void DmShard::omap_put_torn(const OmapEntry& entry, std::size_t prefix) {
  omap_log_->append_torn(encode_omap_put(entry), prefix);
}

std::optional<OmapEntry> DmShard::omap_get(const Fingerprint& object_fp) const {
  auto it = omap_.find(object_fp);
  if (it == omap_.end()) return std::nullopt;
  return it->second;
}

void DmShard::omap_delete(const Fingerprint& object_fp) {
  if (!omap_.contains(object_fp)) return;
  append_omap(encode_omap_erase(object_fp), "delete", object_fp);
  omap_.erase(object_fp);
}

}  // namespace cwdedup
