#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cwdedup/chunking.h"
#include "cwdedup/dm_shard.h"
#include "cwdedup/error.h"
#include "cwdedup/placement.h"

namespace cwdedup {

using Tick = std::uint64_t;
using MsgId = std::uint64_t;
using TxnId = std::uint64_t;

// Sender id used for requests that originate outside the cluster.
inline constexpr NodeId kClientId{0xffffffffu};

// Shared immutable buffer slice; lets chunk payloads travel without copies.
struct Slice {
  std::shared_ptr<const Bytes> buf;
  std::size_t offset = 0;
  std::size_t length = 0;

  static Slice whole(std::shared_ptr<const Bytes> b) {
    const auto n = b ? b->size() : 0;
    return Slice{std::move(b), 0, n};
  }
  std::span<const std::uint8_t> span() const {
    return buf ? std::span<const std::uint8_t>(*buf).subspan(offset, length)
               : std::span<const std::uint8_t>{};
  }
};

namespace msg {

struct Lookup { Fingerprint fp; };
struct WriteChunk { Fingerprint fp; Slice data; TxnId txn = 0; };
struct ReadChunk { Fingerprint fp; };
struct Inc { Fingerprint fp; };
struct Dec { Fingerprint fp; };
struct SetFlag { Fingerprint fp; CommitFlag flag = CommitFlag::kValid; };
struct MoveChunk {
  Fingerprint fp;
  std::optional<Slice> data;
  std::optional<CitEntry> cit;
};
struct OmapPut { OmapEntry entry; };
struct OmapGet { Fingerprint object_fp; };
struct OmapDel { Fingerprint object_fp; };
// Reference reconciliation: per-fingerprint counts of OMAP references.
struct RefTally { std::vector<std::pair<Fingerprint, std::uint64_t>> counts; };

struct PutObject { std::string name; Slice data; };
struct GetObject { std::string name; };
struct DelObject { std::string name; };

struct LookupResult {
  bool exists = false;
  std::uint64_t refcount = 0;
  CommitFlag flag = CommitFlag::kInvalid;
};
struct WriteResult { bool deduped = false; };
struct ChunkData { Slice data; };
struct OmapResult { std::optional<OmapEntry> entry; };
struct PutResult {
  Fingerprint object_fp;
  std::size_t chunks_total = 0;
  std::size_t chunks_deduped = 0;
};
struct ObjectData { Slice data; };
struct Ack {};

struct Reply {
  std::optional<Errc> error;
  std::string detail;
  std::variant<Ack, LookupResult, WriteResult, ChunkData, OmapResult,
               PutResult, ObjectData>
      body;

  bool ok() const { return !error.has_value(); }
};

}  // namespace msg

using Payload =
    std::variant<msg::Lookup, msg::WriteChunk, msg::ReadChunk, msg::Inc,
                 msg::Dec, msg::SetFlag, msg::MoveChunk, msg::OmapPut,
                 msg::OmapGet, msg::OmapDel, msg::RefTally, msg::PutObject,
                 msg::GetObject, msg::DelObject, msg::Reply>;

enum class MsgKind {
  kLookup,
  kWriteChunk,
  kReadChunk,
  kInc,
  kDec,
  kSetFlag,
  kMoveChunk,
  kOmapPut,
  kOmapGet,
  kOmapDel,
  kRefTally,
  kPutObject,
  kGetObject,
  kDelObject,
  kReply,
};
inline constexpr std::size_t kMsgKindCount = 15;

MsgKind kind_of(const Payload& p);
std::string_view kind_name(MsgKind kind);

struct Envelope {
  MsgId id = 0;
  NodeId from;
  NodeId to;
  Epoch epoch = 0;
  MsgId reply_to = 0;  // non-zero for replies
  Payload payload;
};

// One-line deterministic summary for traces; never includes payload bytes.
std::string describe(const Envelope& env);

}  // namespace cwdedup
