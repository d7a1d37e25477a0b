#include "cwdedup/node.h"

#include <fmt/format.h>

#include <algorithm>
#include <cstring>
#include <memory>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

msg::Reply ok_reply() { return msg::Reply{}; }

template <class Body>
msg::Reply ok_reply(Body body) {
  msg::Reply r;
  r.body = std::move(body);
  return r;
}

Slice own(std::vector<std::uint8_t> bytes) {
  return Slice::whole(std::make_shared<const Bytes>(std::move(bytes)));
}

}  // namespace

std::string_view mode_name(DedupMode mode) {
  switch (mode) {
    case DedupMode::kClusterWide: return "cluster-wide";
    case DedupMode::kDiskLocal: return "disk-local";
    case DedupMode::kBroadcastLookup: return "broadcast-lookup";
  }
  return "?";
}

DedupMode parse_mode(std::string_view name) {
  for (auto m : {DedupMode::kClusterWide, DedupMode::kDiskLocal,
                 DedupMode::kBroadcastLookup}) {
    if (mode_name(m) == name) return m;
  }
  throw Error(Errc::kInvalidArgument,
              fmt::format("unknown dedup mode '{}'", name));
}

Node::Node(NodeConfig config, NodeContext& ctx, Topology topology)
    : config_(std::move(config)),
      ctx_(ctx),
      topology_(std::move(topology)),
      shard_(config_.root / "dmshard", config_.shard),
      chunks_(config_.root / "chunks") {
  shard_.set_observer([this](std::string_view table, std::string_view op,
                             const Fingerprint& key) {
    ctx_.trace(id(), "persist", fmt::format("{} {} {}", table, op, key.hex()));
  });
}

void Node::set_topology(Topology topology) {
  topology_ = std::move(topology);
  for (auto& w : flag_queue_) w.owner = owner_of(w.fp);
}

NodeId Node::owner_of(const Fingerprint& chunk_fp) const {
  if (config_.mode == DedupMode::kDiskLocal) return id();
  return place(chunk_fp, topology_);
}

// ---------------------------------------------------------------------------
// Messaging

void Node::call(NodeId to, Payload request, TaskClass cls,
                ReplyHandler handler) {
  Envelope env;
  env.from = id();
  env.to = to;
  env.epoch = topology_.epoch();
  env.payload = std::move(request);
  const MsgId mid = ctx_.send(std::move(env), cls);
  pending_.emplace(mid, std::move(handler));
}

void Node::reply(const Envelope& request, msg::Reply r) {
  Envelope env;
  env.from = id();
  env.to = request.from;
  env.epoch = topology_.epoch();
  env.reply_to = request.id;
  env.payload = std::move(r);
  ctx_.send(std::move(env), TaskClass::kForeground);
}

void Node::reply_error(const Envelope& request, Errc code, std::string detail) {
  msg::Reply r;
  r.error = code;
  r.detail = std::move(detail);
  reply(request, std::move(r));
}

void Node::crash_point(CrashLabel label) {
  if (ctx_.should_crash(id(), label)) throw NodeCrashed{id(), label};
}

void Node::check_epoch(Epoch epoch) const {
  if (epoch != topology_.epoch()) {
    throw Error(Errc::kStaleEpoch,
                fmt::format("node {} at epoch {}, request carries {}", id().value,
                            topology_.epoch(), epoch));
  }
}

void Node::check_owner(const Fingerprint& fp) const {
  if (config_.mode == DedupMode::kDiskLocal) return;
  if (place(fp, topology_) != id()) {
    throw Error(Errc::kStaleEpoch,
                fmt::format("{} is not placed on node {}", fp.hex(), id().value));
  }
}

void Node::deliver(const Envelope& env) {
  if (env.reply_to != 0) {
    auto it = pending_.find(env.reply_to);
    if (it == pending_.end()) return;
    auto handler = std::move(it->second);
    pending_.erase(it);
    handler(std::get<msg::Reply>(env.payload));
    return;
  }
  try {
    if (env.from != kClientId) check_epoch(env.epoch);
    handle_request(env);
  } catch (const Error& e) {
    reply_error(env, e.code(), e.what());
  }
}

void Node::handle_request(const Envelope& env) {
  std::visit(
      Overloaded{
          [&](const msg::Lookup& m) {
            msg::LookupResult res;
            if (auto e = shard_.cit_lookup(m.fp)) {
              res = {true, e->refcount, e->flag};
            }
            reply(env, ok_reply(res));
          },
          [&](const msg::WriteChunk& m) {
            const auto outcome = write_chunk(m.fp, m.data.span(), env.epoch);
            reply(env, ok_reply(msg::WriteResult{outcome == WriteOutcome::kDeduped}));
          },
          [&](const msg::ReadChunk& m) { on_read_chunk(env, m); },
          [&](const msg::Inc& m) {
            check_owner(m.fp);
            shard_.cit_increment(m.fp);
            ++stats_.dedup_hits;
            crash_point(CrashLabel::kAfterCitBeforeAck);
            reply(env, ok_reply(msg::WriteResult{true}));
          },
          [&](const msg::Dec& m) {
            shard_.cit_decrement(m.fp);
            reply(env, ok_reply());
          },
          [&](const msg::SetFlag& m) { on_set_flag(env, m); },
          [&](const msg::MoveChunk& m) { on_move_chunk(env, m); },
          [&](const msg::OmapPut& m) {
            shard_.omap_put(m.entry);
            reply(env, ok_reply());
          },
          [&](const msg::OmapGet& m) {
            reply(env, ok_reply(msg::OmapResult{shard_.omap_get(m.object_fp)}));
          },
          [&](const msg::OmapDel& m) {
            shard_.omap_delete(m.object_fp);
            reply(env, ok_reply());
          },
          [&](const msg::RefTally& m) {
            for (const auto& [fp, n] : m.counts) scrub_tally_[fp] += n;
            reply(env, ok_reply());
          },
          [&](const msg::PutObject& m) { on_put_object(env, m); },
          [&](const msg::GetObject& m) { on_get_object(env, m); },
          [&](const msg::DelObject& m) { on_del_object(env, m); },
          [&](const msg::Reply&) {},
      },
      env.payload);
}

// ---------------------------------------------------------------------------
// Owner side

WriteOutcome Node::write_chunk(const Fingerprint& fp,
                               std::span<const std::uint8_t> data,
                               Epoch epoch) {
  check_epoch(epoch);
  check_owner(fp);
  if (fingerprint_chunk(data) != fp) {
    throw Error(Errc::kCorruptChunk,
                fmt::format("payload does not hash to {}", fp.hex()));
  }
  const auto entry = shard_.cit_lookup(fp);
  if (!entry) {
    crash_point(CrashLabel::kBeforeChunkStore);
    chunks_.put(fp, data);
    ctx_.trace(id(), "persist", fmt::format("chunk put {}", fp.hex()));
    crash_point(CrashLabel::kAfterChunkStoreBeforeCit);
    shard_.cit_create(fp);
    ++stats_.unique_writes;
    crash_point(CrashLabel::kAfterCitBeforeAck);
    return WriteOutcome::kUnique;
  }
  if (entry->flag == CommitFlag::kValid) {
    shard_.cit_increment(fp);
  } else {
    // Duplicate write behind an invalid flag: make sure the bytes exist, then
    // validate and take the reference in one record.
    if (!chunks_.contains(fp)) {
      crash_point(CrashLabel::kBeforeChunkStore);
      chunks_.put(fp, data);
      ctx_.trace(id(), "persist", fmt::format("chunk repair {}", fp.hex()));
      ++stats_.repairs;
    }
    shard_.cit_put(CitEntry{fp, entry->refcount + 1, CommitFlag::kValid});
  }
  ++stats_.dedup_hits;
  crash_point(CrashLabel::kAfterCitBeforeAck);
  return WriteOutcome::kDeduped;
}

ConsistencyOutcome Node::consistency_check(
    const Fingerprint& fp, std::optional<std::span<const std::uint8_t>> data) {
  const auto entry = shard_.cit_lookup(fp);
  if (!entry) {
    throw Error(Errc::kMissingEntry, fmt::format("no CIT entry for {}", fp.hex()));
  }
  if (entry->flag == CommitFlag::kValid) return ConsistencyOutcome::kValidated;
  if (chunks_.contains(fp)) {
    shard_.cit_set_flag(fp, CommitFlag::kValid);
    return ConsistencyOutcome::kValidated;
  }
  if (!data) {
    throw Error(Errc::kMissingChunk,
                fmt::format("chunk {} is missing and no bytes were supplied",
                            fp.hex()));
  }
  if (fingerprint_chunk(*data) != fp) {
    throw Error(Errc::kCorruptChunk,
                fmt::format("repair payload does not hash to {}", fp.hex()));
  }
  chunks_.put(fp, *data);
  ctx_.trace(id(), "persist", fmt::format("chunk repair {}", fp.hex()));
  shard_.cit_set_flag(fp, CommitFlag::kValid);
  ++stats_.repairs;
  return ConsistencyOutcome::kRepaired;
}

void Node::on_read_chunk(const Envelope& env, const msg::ReadChunk& m) {
  check_owner(m.fp);
  auto data = chunks_.read(m.fp);
  if (!data) {
    throw Error(Errc::kMissingChunk, fmt::format("chunk {} missing", m.fp.hex()));
  }
  // A committed reader proves the chunk is referenced; the stat succeeded.
  if (auto e = shard_.cit_lookup(m.fp);
      e && e->flag == CommitFlag::kInvalid && e->refcount > 0) {
    shard_.cit_set_flag(m.fp, CommitFlag::kValid);
  }
  reply(env, ok_reply(msg::ChunkData{own(std::move(*data))}));
}

void Node::on_set_flag(const Envelope& env, const msg::SetFlag& m) {
  const auto entry = shard_.cit_lookup(m.fp);
  // Zero-reference entries stay invalid: their object went away before the
  // manager got to them.
  const bool applies = entry && entry->flag != m.flag &&
                       (m.flag == CommitFlag::kInvalid || entry->refcount > 0);
  if (applies) {
    crash_point(CrashLabel::kBeforeFlagSwitch);
    shard_.cit_set_flag(m.fp, m.flag);
    if (m.flag == CommitFlag::kValid) ++stats_.flags_switched;
  }
  reply(env, ok_reply());
}

void Node::on_move_chunk(const Envelope& env, const msg::MoveChunk& m) {
  check_owner(m.fp);
  if (m.data && !chunks_.contains(m.fp)) {
    chunks_.put(m.fp, m.data->span());
    ctx_.trace(id(), "persist", fmt::format("chunk move-in {}", m.fp.hex()));
  }
  if (m.cit) shard_.cit_put(*m.cit);
  ++stats_.chunks_moved_in;
  reply(env, ok_reply());
}

// ---------------------------------------------------------------------------
// Coordinator side

void Node::on_put_object(const Envelope& env, const msg::PutObject& m) {
  const Fingerprint object_fp = fingerprint_object_name(m.name);
  if (place(object_fp, topology_) != id()) {
    throw Error(Errc::kStaleEpoch,
                fmt::format("node {} does not coordinate '{}'", id().value, m.name));
  }
  if (names_in_flight_.contains(m.name) || shard_.omap_get(object_fp)) {
    throw Error(Errc::kObjectExists, fmt::format("object '{}' exists", m.name));
  }

  const TxnId tid = (std::uint64_t{id().value} << 48) |
                    (std::uint64_t{config_.incarnation & 0xffff} << 32) |
                    next_txn_++;
  WriteTransaction txn;
  txn.id = tid;
  txn.object_name = m.name;
  txn.object_fp = object_fp;
  txn.registered_at = ctx_.now();
  txn.logical_size = m.data.length;
  txn.request = env;
  for (const auto& c : split_object(m.data.span(), config_.chunk_size)) {
    ChunkOp op;
    op.fp = fingerprint_chunk(c);
    op.owner = owner_of(op.fp);
    op.data = Slice{m.data.buf, m.data.offset + c.offset, c.length()};
    txn.chunks.push_back(std::move(op));
  }
  const std::size_t n = txn.chunks.size();
  names_in_flight_.insert(m.name);
  txns_.emplace(tid, std::move(txn));
  ctx_.trace(id(), "txn", fmt::format("begin {} {} chunks={}", tid, m.name, n));
  if (n == 0) {
    maybe_finish(tid);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) dispatch_chunk(tid, i);
}

void Node::dispatch_chunk(TxnId tid, std::size_t index) {
  auto& op = txns_.at(tid).chunks[index];
  std::vector<NodeId> targets;
  if (config_.mode == DedupMode::kBroadcastLookup) {
    for (const auto& m : topology_.members()) targets.push_back(m.id);
  } else {
    targets.push_back(op.owner);
  }
  op.lookups_pending = targets.size();
  const Fingerprint fp = op.fp;
  for (NodeId target : targets) {
    call(target, msg::Lookup{fp}, TaskClass::kForeground,
         [this, tid, index, target](const msg::Reply& r) {
           auto it = txns_.find(tid);
           if (it == txns_.end()) return;
           auto& txn = it->second;
           auto& op = txn.chunks[index];
           if (op.state != ChunkState::kDispatched) return;
           if (!r.ok()) {
             chunk_failed(tid, index, *r.error, r.detail);
             return;
           }
           if (target == op.owner) op.owner_view = std::get<msg::LookupResult>(r.body);
           if (--op.lookups_pending > 0) return;
           if (txn.failed) {
             // Another chunk already failed; nothing was written for this one.
             op.state = ChunkState::kFailed;
             ++txn.resolved;
             maybe_finish(tid);
             return;
           }
           if (op.owner_view && op.owner_view->exists &&
               op.owner_view->flag == CommitFlag::kValid) {
             send_chunk_inc(tid, index);
           } else {
             send_chunk_write(tid, index);
           }
         });
  }
}

void Node::send_chunk_inc(TxnId tid, std::size_t index) {
  const auto& op = txns_.at(tid).chunks[index];
  call(op.owner, msg::Inc{op.fp}, TaskClass::kForeground,
       [this, tid, index](const msg::Reply& r) {
         if (r.ok()) {
           chunk_acked(tid, index, true);
         } else if (*r.error == Errc::kInvalidFlag ||
                    *r.error == Errc::kMissingEntry) {
           // The entry changed between lookup and increment; the full write
           // path handles every CIT state.
           send_chunk_write(tid, index);
         } else {
           chunk_failed(tid, index, *r.error, r.detail);
         }
       });
}

void Node::send_chunk_write(TxnId tid, std::size_t index) {
  const auto& op = txns_.at(tid).chunks[index];
  call(op.owner, msg::WriteChunk{op.fp, op.data, tid}, TaskClass::kForeground,
       [this, tid, index](const msg::Reply& r) {
         if (r.ok()) {
           chunk_acked(tid, index, std::get<msg::WriteResult>(r.body).deduped);
         } else {
           chunk_failed(tid, index, *r.error, r.detail);
         }
       });
}

void Node::chunk_acked(TxnId tid, std::size_t index, bool deduped) {
  auto it = txns_.find(tid);
  if (it == txns_.end()) return;
  auto& txn = it->second;
  auto& op = txn.chunks[index];
  op.state = deduped ? ChunkState::kAckedDuplicate : ChunkState::kAckedUnique;
  ++txn.resolved;
  if (txn.failed) {
    call(op.owner, msg::Dec{op.fp}, TaskClass::kForeground, [](const auto&) {});
  }
  maybe_finish(tid);
}

void Node::chunk_failed(TxnId tid, std::size_t index, Errc code,
                        const std::string& detail) {
  auto it = txns_.find(tid);
  if (it == txns_.end()) return;
  auto& txn = it->second;
  txn.chunks[index].state = ChunkState::kFailed;
  ++txn.resolved;
  if (!txn.failed) {
    txn.failed = true;
    reply_error(txn.request, Errc::kObjectWriteFailed,
                fmt::format("chunk {} failed: {}: {}",
                            txn.chunks[index].fp.hex(), errc_name(code), detail));
    // Undo the references this transaction already took. Unique chunks drop
    // to refcount 0 with an invalid flag and are left for GC.
    for (const auto& op : txn.chunks) {
      if (op.state == ChunkState::kAckedUnique ||
          op.state == ChunkState::kAckedDuplicate) {
        call(op.owner, msg::Dec{op.fp}, TaskClass::kForeground,
             [](const auto&) {});
      }
    }
  }
  maybe_finish(tid);
}

void Node::maybe_finish(TxnId tid) {
  auto it = txns_.find(tid);
  if (it == txns_.end()) return;
  auto& txn = it->second;
  if (txn.resolved < txn.chunks.size()) return;
  if (txn.failed) {
    ctx_.trace(id(), "txn", fmt::format("abort {}", tid));
  } else {
    commit(txn);
  }
  names_in_flight_.erase(txn.object_name);
  txns_.erase(it);
}

void Node::commit(WriteTransaction& txn) {
  OmapEntry entry;
  entry.object_fp = txn.object_fp;
  entry.object_name = txn.object_name;
  entry.logical_size = txn.logical_size;
  std::size_t deduped = 0;
  for (const auto& op : txn.chunks) {
    entry.chunk_fps.push_back(op.fp);
    if (op.state == ChunkState::kAckedDuplicate) ++deduped;
  }

  crash_point(CrashLabel::kBeforeOmapPut);
  if (ctx_.should_crash(id(), CrashLabel::kMidOmapPut)) {
    const auto framed = shard_codec::encode_omap_put(entry).size() + 8;
    shard_.omap_put_torn(entry, framed / 2);
    throw NodeCrashed{id(), CrashLabel::kMidOmapPut};
  }
  shard_.omap_put(entry);

  // Committed: hand the unique chunks to the consistency manager.
  for (const auto& op : txn.chunks) {
    if (op.state == ChunkState::kAckedUnique) flag_queue_.push_back({op.fp, op.owner});
  }
  if (!flag_queue_.empty()) schedule_manager(false);
  ctx_.trace(id(), "txn", fmt::format("commit {}", txn.id));
  reply(txn.request, ok_reply(msg::PutResult{txn.object_fp, txn.chunks.size(),
                                              deduped}));
}

void Node::on_get_object(const Envelope& env, const msg::GetObject& m) {
  const Fingerprint object_fp = fingerprint_object_name(m.name);
  if (place(object_fp, topology_) != id()) {
    throw Error(Errc::kStaleEpoch,
                fmt::format("node {} does not coordinate '{}'", id().value, m.name));
  }
  auto entry = shard_.omap_get(object_fp);
  if (!entry) {
    throw Error(Errc::kObjectNotFound, fmt::format("no object '{}'", m.name));
  }
  auto job = std::make_shared<ReadJob>();
  job->request = env;
  job->entry = std::move(*entry);
  job->parts.resize(job->entry.chunk_fps.size());
  job->pending = job->parts.size();

  auto finish = [this, job] {
    if (job->error) {
      reply_error(job->request, *job->error,
                  fmt::format("object '{}' unreadable", job->entry.object_name));
      return;
    }
    auto out = std::make_shared<Bytes>();
    out->reserve(job->entry.logical_size);
    for (const auto& p : job->parts) {
      const auto s = p.span();
      out->insert(out->end(), s.begin(), s.end());
    }
    reply(job->request, ok_reply(msg::ObjectData{Slice::whole(std::move(out))}));
  };
  if (job->pending == 0) {
    finish();
    return;
  }
  for (std::size_t i = 0; i < job->parts.size(); ++i) {
    const Fingerprint fp = job->entry.chunk_fps[i];
    call(owner_of(fp), msg::ReadChunk{fp}, TaskClass::kForeground,
         [this, job, i, fp, finish](const msg::Reply& r) {
           if (!r.ok()) {
             if (!job->error) {
               job->error = *r.error == Errc::kNodeUnavailable
                                ? Errc::kNodeUnavailable
                                : Errc::kObjectCorrupt;
             }
           } else {
             job->parts[i] = std::get<msg::ChunkData>(r.body).data;
             if (config_.verify_reads && fingerprint_chunk(job->parts[i].span()) != fp) {
               job->error = Errc::kObjectCorrupt;
             }
           }
           if (--job->pending == 0) finish();
         });
  }
}

void Node::on_del_object(const Envelope& env, const msg::DelObject& m) {
  const Fingerprint object_fp = fingerprint_object_name(m.name);
  if (place(object_fp, topology_) != id()) {
    throw Error(Errc::kStaleEpoch,
                fmt::format("node {} does not coordinate '{}'", id().value, m.name));
  }
  auto entry = shard_.omap_get(object_fp);
  if (!entry) {
    throw Error(Errc::kObjectNotFound, fmt::format("no object '{}'", m.name));
  }
  // Uncommit first; a crash after this point can only over-count.
  shard_.omap_delete(object_fp);
  if (entry->chunk_fps.empty()) {
    reply(env, ok_reply());
    return;
  }
  auto job = std::make_shared<DeleteJob>();
  job->request = env;
  job->pending = entry->chunk_fps.size();
  for (const auto& fp : entry->chunk_fps) {
    call(owner_of(fp), msg::Dec{fp}, TaskClass::kForeground,
         [this, job](const msg::Reply&) {
           if (--job->pending == 0) reply(job->request, ok_reply());
         });
  }
}

// ---------------------------------------------------------------------------
// Consistency manager

void Node::schedule_manager(bool daemon) {
  if (manager_scheduled_) return;
  manager_scheduled_ = true;
  const Tick period = std::max<Tick>(1, config_.consistency_period);
  const Tick delay = period - ctx_.now() % period;
  ctx_.schedule(id(), delay, [this] { consistency_manager_run(); }, daemon);
}

std::size_t Node::consistency_manager_run() {
  manager_scheduled_ = false;
  std::deque<FlagWork> work;
  work.swap(flag_queue_);
  for (const auto& w : work) {
    ++flag_inflight_;
    call(w.owner, msg::SetFlag{w.fp, CommitFlag::kValid}, TaskClass::kManager,
         [this, w](const msg::Reply& r) {
           --flag_inflight_;
           if (r.ok()) return;
           if (*r.error == Errc::kNodeUnavailable || *r.error == Errc::kStaleEpoch) {
             flag_queue_.push_back({w.fp, owner_of(w.fp)});
             schedule_manager(true);
           }
         });
  }
  if (!work.empty()) {
    ctx_.trace(id(), "manager", fmt::format("dispatched {}", work.size()));
  }
  return work.size();
}

bool Node::manager_idle() const {
  return flag_queue_.empty() && flag_inflight_ == 0;
}

// ---------------------------------------------------------------------------
// Garbage collection

std::vector<GcCandidate> Node::gc_collect() {
  const Tick now = ctx_.now();
  std::vector<GcCandidate> added;
  for (const auto& [fp, refcount] : shard_.cit_scan_invalid()) {
    if (gc_candidates_.contains(fp)) continue;
    GcCandidate c{fp, refcount, now};
    gc_candidates_.emplace(fp, c);
    added.push_back(c);
  }
  for (const auto& fp : chunks_.list()) {
    if (gc_candidates_.contains(fp) || shard_.cit_lookup(fp)) continue;
    GcCandidate c{fp, std::nullopt, now};
    gc_candidates_.emplace(fp, c);
    added.push_back(c);
  }
  if (!added.empty()) {
    ctx_.trace(id(), "gc", fmt::format("collected {}", added.size()));
  }
  return added;
}

std::size_t Node::gc_reclaim(Tick now) {
  std::size_t reclaimed = 0;
  for (auto it = gc_candidates_.begin(); it != gc_candidates_.end();) {
    const auto& c = it->second;
    if (now < c.collected_at + config_.gc_threshold) {
      ++it;
      continue;
    }
    const auto entry = shard_.cit_lookup(c.chunk_fp);
    bool unchanged = false;
    if (!c.observed_refcount) {
      unchanged = !entry.has_value();
    } else {
      unchanged = entry && entry->flag == CommitFlag::kInvalid &&
                  entry->refcount == *c.observed_refcount;
    }
    if (unchanged) {
      // Chunk first: a crash in between leaves a flag-0 row to collect again.
      const bool had_file = chunks_.erase(c.chunk_fp);
      if (entry) shard_.cit_erase(c.chunk_fp);
      if (had_file || entry) {
        ++reclaimed;
        ctx_.trace(id(), "gc", fmt::format("reclaim {}", c.chunk_fp.hex()));
      }
    }
    it = gc_candidates_.erase(it);
  }
  stats_.gc_reclaimed += reclaimed;
  return reclaimed;
}

// ---------------------------------------------------------------------------
// Relocation

void Node::execute_moves(const std::vector<Move>& chunk_moves,
                         const std::vector<Move>& omap_moves) {
  for (const auto& mv : chunk_moves) {
    msg::MoveChunk m;
    m.fp = mv.fp;
    if (auto bytes = chunks_.read(mv.fp)) m.data = own(std::move(*bytes));
    m.cit = shard_.cit_lookup(mv.fp);
    const Fingerprint fp = mv.fp;
    call(mv.to, std::move(m), TaskClass::kRebalance,
         [this, fp](const msg::Reply& r) {
           if (!r.ok()) {
             ++moves_failed_;
             return;
           }
           crash_point(CrashLabel::kMidRebalanceAfterCopy);
           chunks_.erase(fp);
           shard_.cit_erase(fp);
           ++stats_.chunks_moved_out;
         });
  }
  for (const auto& mv : omap_moves) {
    auto entry = shard_.omap_get(mv.fp);
    if (!entry) continue;
    const Fingerprint object_fp = mv.fp;
    call(mv.to, msg::OmapPut{std::move(*entry)}, TaskClass::kRebalance,
         [this, object_fp](const msg::Reply& r) {
           if (!r.ok()) {
             ++moves_failed_;
             return;
           }
           shard_.omap_delete(object_fp);
           ++stats_.omap_rows_moved_out;
         });
  }
}

// ---------------------------------------------------------------------------
// Reference reconciliation

void Node::scrub_send() {
  std::map<NodeId, std::map<Fingerprint, std::uint64_t>> per_owner;
  for (const auto& [object_fp, entry] : shard_.omap()) {
    for (const auto& fp : entry.chunk_fps) ++per_owner[owner_of(fp)][fp];
  }
  for (auto& [owner, counts] : per_owner) {
    msg::RefTally tally;
    tally.counts.assign(counts.begin(), counts.end());
    call(owner, std::move(tally), TaskClass::kScrub, [](const auto&) {});
  }
}

void Node::scrub_apply() {
  std::vector<CitEntry> entries;
  entries.reserve(shard_.cit().size());
  for (const auto& [fp, e] : shard_.cit()) entries.push_back(e);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.chunk_fp < b.chunk_fp; });

  for (const auto& e : entries) {
    auto it = scrub_tally_.find(e.chunk_fp);
    const std::uint64_t truth = it == scrub_tally_.end() ? 0 : it->second;
    CitEntry want = e;
    if (e.refcount > truth) {
      want.refcount = truth;
    } else if (e.refcount < truth) {
      // Never raised: an under-count means a reference was lost, which only
      // the audit should surface.
      ++stats_.scrub_undercounts;
    }
    if (want.refcount == 0) {
      want.flag = CommitFlag::kInvalid;
    } else if (want.flag == CommitFlag::kInvalid && chunks_.contains(e.chunk_fp)) {
      want.flag = CommitFlag::kValid;
    }
    if (want != e) {
      shard_.cit_put(want);
      ++stats_.scrub_corrections;
    }
  }
  for (const auto& [fp, n] : scrub_tally_) {
    if (!shard_.cit_lookup(fp)) ++stats_.scrub_dangling;
  }
  scrub_tally_.clear();
}

}  // namespace cwdedup
