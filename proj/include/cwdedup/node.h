#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cwdedup/chunk_store.h"
#include "cwdedup/crash_point.h"
#include "cwdedup/dm_shard.h"
#include "cwdedup/messages.h"
#include "cwdedup/placement.h"

namespace cwdedup {

enum class DedupMode {
  kClusterWide,      // chunks routed to place(chunk_fp)
  kDiskLocal,        // chunks kept on the coordinator; dedup scope is one node
  kBroadcastLookup,  // like cluster-wide, but every lookup goes to all nodes
};

std::string_view mode_name(DedupMode mode);
DedupMode parse_mode(std::string_view name);  // throws kInvalidArgument

// Which background or foreground activity issued an RPC. Used to record wait
// edges between activities.
enum class TaskClass { kForeground, kManager, kGc, kRebalance, kScrub };
inline constexpr std::size_t kTaskClassCount = 5;

// Services a node gets from the simulator hosting it.
class NodeContext {
 public:
  virtual ~NodeContext() = default;

  virtual Tick now() const = 0;
  // Assigns a message id and hands the envelope to the bus.
  virtual MsgId send(Envelope env, TaskClass sender) = 0;
  // Runs `fn` on `self` after `delay` ticks, unless the node has crashed in
  // the meantime. Daemon tasks do not keep the cluster from being idle.
  virtual void schedule(NodeId self, Tick delay, std::function<void()> fn,
                        bool daemon) = 0;
  virtual bool should_crash(NodeId self, CrashLabel label) = 0;
  virtual void trace(NodeId self, std::string_view kind, std::string detail) = 0;
};

struct NodeConfig {
  NodeId id;
  std::filesystem::path root;
  std::size_t chunk_size = kDefaultChunkSize;
  DedupMode mode = DedupMode::kClusterWide;
  Tick consistency_period = 10;
  Tick gc_threshold = 20;
  bool verify_reads = true;
  // Part of txn ids, so ids stay unique across restarts of one node.
  std::uint32_t incarnation = 0;
  DmShard::Options shard;
};

enum class WriteOutcome { kUnique, kDeduped };
enum class ConsistencyOutcome { kValidated, kRepaired };

struct GcCandidate {
  Fingerprint chunk_fp;
  // nullopt for a chunk file that had no CIT entry when collected.
  std::optional<std::uint64_t> observed_refcount;
  Tick collected_at = 0;
};

struct NodeStats {
  std::uint64_t unique_writes = 0;
  std::uint64_t dedup_hits = 0;
  std::uint64_t repairs = 0;
  std::uint64_t flags_switched = 0;
  std::uint64_t gc_reclaimed = 0;
  std::uint64_t chunks_moved_in = 0;
  std::uint64_t chunks_moved_out = 0;
  std::uint64_t omap_rows_moved_out = 0;
  std::uint64_t scrub_corrections = 0;
  std::uint64_t scrub_undercounts = 0;
  std::uint64_t scrub_dangling = 0;
};

struct ChunkState {
  enum Value { kDispatched, kAckedUnique, kAckedDuplicate, kFailed };
};

/// One storage server. A single-owner actor: the simulator delivers messages
/// and timers one at a time, so no handler ever blocks another.
///
/// Roles:
///  - coordinator for objects whose name hashes here (put/get/delete, OMAP);
///  - owner of chunks whose fingerprint places here (CIT + chunk store);
///  - consistency manager: switches commit flags after transactions commit;
///  - garbage collector: reclaims flag-0 chunks after a threshold.
class Node {
 public:
  Node(NodeConfig config, NodeContext& ctx, Topology topology);

  NodeId id() const { return config_.id; }
  const NodeConfig& config() const { return config_; }
  const Topology& topology() const { return topology_; }
  void set_topology(Topology topology);

  void deliver(const Envelope& env);

  // Owner side. Throws Error for stale epochs, corrupt payloads and shard
  // failures; throws NodeCrashed at armed crash points.
  WriteOutcome write_chunk(const Fingerprint& fp,
                           std::span<const std::uint8_t> data, Epoch epoch);
  ConsistencyOutcome consistency_check(
      const Fingerprint& fp,
      std::optional<std::span<const std::uint8_t>> data);

  // Dispatches SET_FLAG for every chunk of every committed transaction that
  // still awaits its flag switch. Returns the number dispatched.
  std::size_t consistency_manager_run();
  bool manager_idle() const;
  std::size_t transactions_in_flight() const { return txns_.size(); }

  std::vector<GcCandidate> gc_collect();
  std::size_t gc_reclaim(Tick now);
  const std::map<Fingerprint, GcCandidate>& gc_candidates() const {
    return gc_candidates_;
  }

  // Relocation: copy each row to its new owner, then drop the local copy.
  void execute_moves(const std::vector<Move>& chunk_moves,
                     const std::vector<Move>& omap_moves);
  std::size_t moves_failed() const { return moves_failed_; }

  // Reference reconciliation, run while the cluster is quiet: every node
  // sends per-owner counts of OMAP references, then every owner brings CIT
  // refcounts down to the counted truth and re-validates referenced chunks.
  void scrub_send();
  void scrub_apply();

  NodeId owner_of(const Fingerprint& chunk_fp) const;

  DmShard& shard() { return shard_; }
  const DmShard& shard() const { return shard_; }
  ChunkStore& chunks() { return chunks_; }
  const ChunkStore& chunks() const { return chunks_; }
  const NodeStats& stats() const { return stats_; }

 private:
  using ReplyHandler = std::function<void(const msg::Reply&)>;

  struct ChunkOp {
    Fingerprint fp;
    NodeId owner;
    Slice data;
    ChunkState::Value state = ChunkState::kDispatched;
    std::size_t lookups_pending = 0;
    std::optional<msg::LookupResult> owner_view;
  };

  struct WriteTransaction {
    TxnId id = 0;
    std::string object_name;
    Fingerprint object_fp;
    std::vector<ChunkOp> chunks;
    Tick registered_at = 0;
    std::uint64_t logical_size = 0;
    std::size_t resolved = 0;
    bool failed = false;
    Envelope request;  // client request, for the reply
  };

  struct FlagWork {
    Fingerprint fp;
    NodeId owner;
  };

  struct ReadJob {
    Envelope request;
    OmapEntry entry;
    std::vector<Slice> parts;
    std::size_t pending = 0;
    std::optional<Errc> error;
  };

  struct DeleteJob {
    Envelope request;
    std::size_t pending = 0;
  };

  void call(NodeId to, Payload request, TaskClass cls, ReplyHandler handler);
  void reply(const Envelope& request, msg::Reply r);
  void reply_error(const Envelope& request, Errc code, std::string detail);
  void crash_point(CrashLabel label);
  void check_epoch(Epoch epoch) const;
  void check_owner(const Fingerprint& fp) const;

  void handle_request(const Envelope& env);
  void on_put_object(const Envelope& env, const msg::PutObject& m);
  void on_get_object(const Envelope& env, const msg::GetObject& m);
  void on_del_object(const Envelope& env, const msg::DelObject& m);
  void on_set_flag(const Envelope& env, const msg::SetFlag& m);
  void on_move_chunk(const Envelope& env, const msg::MoveChunk& m);
  void on_read_chunk(const Envelope& env, const msg::ReadChunk& m);

  void dispatch_chunk(TxnId txn, std::size_t index);
  void send_chunk_write(TxnId txn, std::size_t index);
  void send_chunk_inc(TxnId txn, std::size_t index);
  void chunk_acked(TxnId txn, std::size_t index, bool deduped);
  void chunk_failed(TxnId txn, std::size_t index, Errc code,
                    const std::string& detail);
  void maybe_finish(TxnId txn);
  void commit(WriteTransaction& txn);
  void schedule_manager(bool daemon);

  NodeConfig config_;
  NodeContext& ctx_;
  Topology topology_;
  DmShard shard_;
  ChunkStore chunks_;
  NodeStats stats_;

  // Volatile state; all of it is lost when the node crashes.
  std::unordered_map<MsgId, ReplyHandler> pending_;
  std::map<TxnId, WriteTransaction> txns_;
  std::set<std::string> names_in_flight_;
  TxnId next_txn_ = 1;
  std::deque<FlagWork> flag_queue_;
  std::size_t flag_inflight_ = 0;
  bool manager_scheduled_ = false;
  std::map<Fingerprint, GcCandidate> gc_candidates_;
  std::size_t moves_failed_ = 0;
  std::unordered_map<Fingerprint, std::uint64_t> scrub_tally_;
};

}  // namespace cwdedup
