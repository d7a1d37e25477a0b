#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cwdedup/crash_point.h"
#include "cwdedup/messages.h"
#include "cwdedup/node.h"
#include "cwdedup/placement.h"

namespace cwdedup {

// Per-message delivery delay, drawn uniformly from [min, max] ticks.
struct DelayModel {
  Tick min = 1;
  Tick max = 3;
};

struct SimConfig {
  std::uint64_t seed = 1;
  std::uint32_t node_count = 4;
  std::size_t chunk_size = kDefaultChunkSize;
  Tick gc_threshold = 20;
  Tick consistency_period = 10;
  DelayModel delay;
  DedupMode mode = DedupMode::kClusterWide;
  bool verify_reads = true;
  DmShard::Options shard;
};

struct TraceEvent {
  Tick tick = 0;
  std::string kind;
  std::optional<NodeId> node;
  std::string detail;
};

// {"tick":..,"kind":..,"node":..,"detail":..}; node is null for events that
// do not belong to a node.
std::string trace_json(const TraceEvent& event);

struct AuditReport {
  std::uint64_t refcount_mismatches = 0;
  std::uint64_t flag_violations = 0;
  std::uint64_t orphan_chunks = 0;
  std::uint64_t dangling_refs = 0;
  std::uint64_t unreadable_objects = 0;

  bool clean() const {
    return refcount_mismatches == 0 && flag_violations == 0 &&
           orphan_chunks == 0 && dangling_refs == 0 && unreadable_objects == 0;
  }
  friend bool operator==(const AuditReport&, const AuditReport&) = default;
};

std::string describe(const AuditReport& report);

struct BusCounters {
  std::array<std::uint64_t, kMsgKindCount> sent{};
  // wait_edges[from][to]: requests issued by one activity and served by
  // another. Replies are not counted.
  std::array<std::array<std::uint64_t, kTaskClassCount>, kTaskClassCount>
      wait_edges{};
  std::uint64_t dropped = 0;

  std::uint64_t of(MsgKind kind) const {
    return sent[static_cast<std::size_t>(kind)];
  }
  std::uint64_t lookups() const { return of(MsgKind::kLookup); }
  std::uint64_t total() const;
  std::uint64_t waits(TaskClass from, TaskClass to) const {
    return wait_edges[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)];
  }
};

// Which activity serves a request of this kind.
TaskClass serving_class(MsgKind kind);

// Cluster bookkeeping that outlives one process, for reopening a root.
struct ClusterState {
  Topology topology;
  std::optional<Topology> rebalance_from;  // set while a rebalance is pending
  std::vector<NodeId> retiring;            // removed nodes still holding data
  std::map<NodeId, std::uint32_t> incarnations;
  std::uint32_t next_node_id = 0;
  Tick tick = 0;
  std::uint64_t epoch_runs = 0;  // reopen count; varies the delay stream
};

using RequestId = MsgId;

/// Deterministic in-process cluster: nodes, a message bus with seeded
/// delays, a single logical clock, crash injection and brute-force audits.
/// Nodes persist under <root>/node-<id>.
class Cluster : public NodeContext {
 public:
  Cluster(SimConfig config, std::filesystem::path root);
  Cluster(SimConfig config, std::filesystem::path root, ClusterState state);
  ~Cluster() override;

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  const SimConfig& config() const { return config_; }
  const std::filesystem::path& root() const { return root_; }
  const Topology& topology() const { return topology_; }
  ClusterState state() const;

  // --- NodeContext
  Tick now() const override { return now_; }
  MsgId send(Envelope env, TaskClass sender) override;
  void schedule(NodeId self, Tick delay, std::function<void()> fn,
                bool daemon) override;
  bool should_crash(NodeId self, CrashLabel label) override;
  void trace(NodeId self, std::string_view kind, std::string detail) override;
  // Trace event not tied to a node, stamped with the current tick.
  void trace_client(std::string_view kind, std::string detail);

  // --- Client requests, routed to the object's coordinator.
  RequestId submit_put(const std::string& name, Slice data);
  RequestId submit_get(const std::string& name);
  RequestId submit_del(const std::string& name);
  std::optional<msg::Reply> result(RequestId id) const;

  // Synchronous wrappers: submit, run until idle, throw Error on failure.
  msg::PutResult put(const std::string& name, Bytes data);
  Bytes get(const std::string& name);
  void del(const std::string& name);

  // --- Scheduling
  // Processes events until no foreground event is pending. Daemon events that
  // fall before the last foreground event run too.
  void run_until_idle();
  // Processes every event up to now + ticks, then sets the clock there.
  void advance(Tick ticks);
  // run_until_idle, then keeps going until every consistency manager is
  // idle. Returns false if that did not happen within `budget` ticks.
  bool drain(Tick budget = 100000);
  bool quiesced() const;
  std::size_t pending_events() const { return events_.size(); }

  // --- Faults
  // The target may be a node that has not been added yet.
  void arm(CrashPoint cp);
  void disarm_all() { armed_.clear(); }
  // Hits of each (node, label) seen so far, armed or not.
  const std::map<std::pair<NodeId, CrashLabel>, std::uint64_t>& label_hits() const {
    return label_hits_;
  }
  void crash(NodeId id, std::optional<CrashLabel> label = std::nullopt);
  void recover(NodeId id);
  bool alive(NodeId id) const;
  std::vector<NodeId> crashed_nodes() const;

  // --- Maintenance
  // Scrub, collect, wait out the GC threshold, reclaim. Requires every node
  // to be up. Returns the number of reclaimed chunks.
  std::size_t gc_cycle();
  NodeId add_node(double weight = 1.0);
  void remove_node(NodeId id);
  // Re-runs an interrupted relocation. No-op if nothing is pending.
  void rebalance();
  bool rebalance_pending() const { return rebalance_from_.has_value(); }
  // Moves dispatched by relocation so far.
  std::uint64_t chunks_relocated() const { return chunks_relocated_; }

  // Throws kNotQuiesced unless quiesced() and every node is up.
  AuditReport audit() const;

  // --- Inspection
  Node* node(NodeId id);
  const Node* node(NodeId id) const;
  std::vector<NodeId> node_ids() const;  // every hosted node, sorted
  const BusCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

  using TraceSink = std::function<void(const TraceEvent&)>;
  void set_trace_sink(TraceSink sink) { sink_ = std::move(sink); }

 private:
  struct Event {
    Tick tick = 0;
    std::uint64_t seq = 0;
    bool daemon = false;
    std::optional<Envelope> message;
    NodeId timer_node;
    std::uint32_t timer_incarnation = 0;
    std::function<void()> timer;
  };
  struct Hosted {
    std::unique_ptr<Node> node;  // null while crashed
    std::uint32_t incarnation = 0;
    std::map<MsgId, NodeId> open_requests;  // delivered, not yet answered
  };

  void start_node(NodeId id);
  NodeConfig node_config(NodeId id) const;
  void enqueue(Event ev);
  void step();
  void deliver(Envelope env);
  void fail_request(const Envelope& request, NodeId failed_node);
  void handle_crash(NodeId id, CrashLabel label);
  void emit(std::optional<NodeId> node, std::string kind, std::string detail);
  Tick draw_delay();
  void require_all_up(std::string_view what) const;
  void publish(Topology next);
  void relocate();
  RequestId submit(NodeId coordinator, Payload payload);
  NodeId coordinator_for(const std::string& name) const;
  msg::Reply await(RequestId id);

  SimConfig config_;
  std::filesystem::path root_;
  Topology topology_;
  std::optional<Topology> rebalance_from_;
  std::set<NodeId> retiring_;
  std::uint32_t next_node_id_ = 0;
  std::uint64_t epoch_runs_ = 0;

  Tick now_ = 0;
  std::uint64_t next_seq_ = 0;
  MsgId next_msg_ = 1;
  std::mt19937_64 rng_;
  std::map<std::pair<Tick, std::uint64_t>, Event> events_;
  std::size_t foreground_events_ = 0;

  std::map<NodeId, Hosted> nodes_;
  std::map<RequestId, msg::Reply> client_results_;
  std::vector<std::pair<CrashPoint, std::uint64_t>> armed_;  // point, hits
  std::map<std::pair<NodeId, CrashLabel>, std::uint64_t> label_hits_;
  BusCounters counters_;
  std::uint64_t chunks_relocated_ = 0;
  TraceSink sink_;
};

}  // namespace cwdedup
