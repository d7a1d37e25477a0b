#include "cwdedup/cluster.h"

#include <fmt/format.h>

#include <algorithm>
#include <json.hpp>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_request(const Envelope& env) { return env.reply_to == 0; }

}  // namespace

std::string trace_json(const TraceEvent& event) {
  nlohmann::ordered_json j;
  j["tick"] = event.tick;
  j["kind"] = event.kind;
  if (event.node) {
    j["node"] = event.node->value;
  } else {
    j["node"] = nullptr;
  }
  j["detail"] = event.detail;
  return j.dump();
}

std::string describe(const AuditReport& r) {
  return fmt::format(
      "refcount_mismatches={} flag_violations={} orphan_chunks={} "
      "dangling_refs={} unreadable_objects={}",
      r.refcount_mismatches, r.flag_violations, r.orphan_chunks, r.dangling_refs,
      r.unreadable_objects);
}

std::uint64_t BusCounters::total() const {
  std::uint64_t n = 0;
  for (auto v : sent) n += v;
  return n;
}

TaskClass serving_class(MsgKind kind) {
  switch (kind) {
    case MsgKind::kSetFlag: return TaskClass::kManager;
    case MsgKind::kMoveChunk: return TaskClass::kRebalance;
    case MsgKind::kRefTally: return TaskClass::kScrub;
    default: return TaskClass::kForeground;
  }
}

Cluster::Cluster(SimConfig config, std::filesystem::path root)
    : Cluster(config, std::move(root), [&] {
        ClusterState s;
        s.topology = Topology::uniform(config.node_count);
        s.next_node_id = config.node_count;
        return s;
      }()) {}

Cluster::Cluster(SimConfig config, std::filesystem::path root, ClusterState state)
    : config_(std::move(config)),
      root_(std::move(root)),
      topology_(std::move(state.topology)),
      rebalance_from_(std::move(state.rebalance_from)),
      retiring_(state.retiring.begin(), state.retiring.end()),
      next_node_id_(state.next_node_id),
      epoch_runs_(state.epoch_runs),
      now_(state.tick),
      rng_(mix(config_.seed) ^ mix(~state.epoch_runs)) {
  if (config_.chunk_size == 0) {
    throw Error(Errc::kInvalidArgument, "chunk size must be positive");
  }
  if (config_.delay.min > config_.delay.max) {
    throw Error(Errc::kInvalidArgument, "delay min exceeds max");
  }
  if (topology_.empty()) throw Error(Errc::kNoNodes, "cluster has no nodes");
  std::filesystem::create_directories(root_);
  for (const auto& m : topology_.members()) {
    nodes_[m.id].incarnation = state.incarnations[m.id];
  }
  for (NodeId id : retiring_) nodes_[id].incarnation = state.incarnations[id];
  for (auto& [id, h] : nodes_) start_node(id);
}

Cluster::~Cluster() = default;

ClusterState Cluster::state() const {
  ClusterState s;
  s.topology = topology_;
  s.rebalance_from = rebalance_from_;
  s.retiring.assign(retiring_.begin(), retiring_.end());
  for (const auto& [id, h] : nodes_) s.incarnations[id] = h.incarnation;
  s.next_node_id = next_node_id_;
  s.tick = now_;
  s.epoch_runs = epoch_runs_;
  return s;
}

NodeConfig Cluster::node_config(NodeId id) const {
  NodeConfig c;
  c.id = id;
  c.root = root_ / fmt::format("node-{}", id.value);
  c.chunk_size = config_.chunk_size;
  c.mode = config_.mode;
  c.consistency_period = config_.consistency_period;
  c.gc_threshold = config_.gc_threshold;
  c.verify_reads = config_.verify_reads;
  c.incarnation = nodes_.at(id).incarnation;
  c.shard = config_.shard;
  return c;
}

void Cluster::start_node(NodeId id) {
  auto& h = nodes_[id];
  h.node = std::make_unique<Node>(node_config(id), *this, topology_);
  h.open_requests.clear();
}

Node* Cluster::node(NodeId id) {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : it->second.node.get();
}

const Node* Cluster::node(NodeId id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : it->second.node.get();
}

std::vector<NodeId> Cluster::node_ids() const {
  std::vector<NodeId> ids;
  for (const auto& [id, h] : nodes_) ids.push_back(id);
  return ids;
}

bool Cluster::alive(NodeId id) const { return node(id) != nullptr; }

std::vector<NodeId> Cluster::crashed_nodes() const {
  std::vector<NodeId> out;
  for (const auto& [id, h] : nodes_) {
    if (!h.node) out.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bus and clock

void Cluster::emit(std::optional<NodeId> node, std::string kind,
                   std::string detail) {
  if (!sink_) return;
  sink_(TraceEvent{now_, std::move(kind), node, std::move(detail)});
}

void Cluster::trace(NodeId self, std::string_view kind, std::string detail) {
  if (!sink_) return;
  emit(self, std::string(kind), std::move(detail));
}

void Cluster::trace_client(std::string_view kind, std::string detail) {
  emit(std::nullopt, std::string(kind), std::move(detail));
}

Tick Cluster::draw_delay() {
  const Tick span = config_.delay.max - config_.delay.min + 1;
  return config_.delay.min + rng_() % span;
}

void Cluster::enqueue(Event ev) {
  ev.seq = next_seq_++;
  if (!ev.daemon) ++foreground_events_;
  const auto key = std::make_pair(ev.tick, ev.seq);
  events_.emplace(key, std::move(ev));
}

MsgId Cluster::send(Envelope env, TaskClass sender) {
  env.id = next_msg_++;
  const MsgKind kind = kind_of(env.payload);
  ++counters_.sent[static_cast<std::size_t>(kind)];
  if (is_request(env)) {
    ++counters_.wait_edges[static_cast<std::size_t>(sender)]
                          [static_cast<std::size_t>(serving_class(kind))];
  } else if (auto it = nodes_.find(env.from); it != nodes_.end()) {
    it->second.open_requests.erase(env.reply_to);
  }
  if (sink_) emit(env.from == kClientId ? std::nullopt : std::optional(env.from),
                  "msg", describe(env));
  Event ev;
  ev.tick = now_ + draw_delay();
  const MsgId id = env.id;
  ev.message = std::move(env);
  enqueue(std::move(ev));
  return id;
}

void Cluster::schedule(NodeId self, Tick delay, std::function<void()> fn,
                       bool daemon) {
  Event ev;
  ev.tick = now_ + delay;
  ev.daemon = daemon;
  ev.timer_node = self;
  ev.timer_incarnation = nodes_.at(self).incarnation;
  ev.timer = std::move(fn);
  enqueue(std::move(ev));
}

void Cluster::step() {
  auto it = events_.begin();
  Event ev = std::move(it->second);
  events_.erase(it);
  if (!ev.daemon) --foreground_events_;
  now_ = std::max(now_, ev.tick);

  if (ev.message) {
    deliver(std::move(*ev.message));
    return;
  }
  auto h = nodes_.find(ev.timer_node);
  if (h == nodes_.end() || !h->second.node ||
      h->second.incarnation != ev.timer_incarnation) {
    return;
  }
  try {
    ev.timer();
  } catch (const NodeCrashed& c) {
    handle_crash(c.node, c.label);
  }
}

void Cluster::fail_request(const Envelope& request, NodeId failed_node) {
  Envelope r;
  r.from = failed_node;
  r.to = request.from;
  r.epoch = topology_.epoch();
  r.reply_to = request.id;
  msg::Reply reply;
  reply.error = Errc::kNodeUnavailable;
  reply.detail = fmt::format("node {} is down", failed_node.value);
  r.payload = std::move(reply);
  send(std::move(r), TaskClass::kForeground);
}

void Cluster::deliver(Envelope env) {
  if (env.to == kClientId) {
    client_results_[env.reply_to] = std::get<msg::Reply>(env.payload);
    return;
  }
  auto h = nodes_.find(env.to);
  if (h == nodes_.end() || !h->second.node) {
    ++counters_.dropped;
    emit(std::nullopt, "drop", fmt::format("#{} to down node {}", env.id, env.to.value));
    if (is_request(env)) fail_request(env, env.to);
    return;
  }
  if (is_request(env)) h->second.open_requests.emplace(env.id, env.from);
  const NodeId target = env.to;
  try {
    h->second.node->deliver(env);
  } catch (const NodeCrashed& c) {
    handle_crash(c.node == target ? target : c.node, c.label);
  }
}

void Cluster::handle_crash(NodeId id, CrashLabel label) {
  emit(id, "crash", std::string(crash_label_name(label)));
  crash(id, label);
}

void Cluster::crash(NodeId id, std::optional<CrashLabel> label) {
  auto it = nodes_.find(id);
  if (it == nodes_.end() || !it->second.node) {
    throw Error(Errc::kInvalidState, fmt::format("node {} is not running", id.value));
  }
  auto& h = it->second;
  h.node.reset();
  if (!label) emit(id, "crash", "halt");
  // Whoever waits on this node learns it is gone.
  std::vector<std::pair<MsgId, NodeId>> open(h.open_requests.begin(),
                                              h.open_requests.end());
  h.open_requests.clear();
  for (const auto& [mid, from] : open) {
    Envelope req;
    req.id = mid;
    req.from = from;
    req.to = id;
    fail_request(req, id);
  }
}

void Cluster::recover(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) {
    throw Error(Errc::kInvalidArgument, fmt::format("unknown node {}", id.value));
  }
  if (it->second.node) {
    throw Error(Errc::kInvalidState,
                fmt::format("node {} has not crashed", id.value));
  }
  ++it->second.incarnation;
  start_node(id);
  emit(id, "recover", fmt::format("incarnation {}", it->second.incarnation));
}

void Cluster::arm(CrashPoint cp) {
  if (cp.trigger == 0) {
    throw Error(Errc::kInvalidArgument, "crash trigger counts from 1");
  }
  armed_.emplace_back(cp, 0);
}

bool Cluster::should_crash(NodeId self, CrashLabel label) {
  ++label_hits_[{self, label}];
  for (auto it = armed_.begin(); it != armed_.end(); ++it) {
    auto& [cp, hits] = *it;
    if (cp.target != self || cp.label != label) continue;
    if (++hits == cp.trigger) {
      armed_.erase(it);
      return true;
    }
  }
  return false;
}

void Cluster::run_until_idle() {
  while (foreground_events_ > 0) step();
}

void Cluster::advance(Tick ticks) {
  const Tick target = now_ + ticks;
  while (!events_.empty() && events_.begin()->first.first <= target) step();
  now_ = std::max(now_, target);
}

bool Cluster::quiesced() const {
  if (foreground_events_ > 0) return false;
  for (const auto& [id, h] : nodes_) {
    if (!h.node) continue;
    if (h.node->transactions_in_flight() > 0 || !h.node->manager_idle()) {
      return false;
    }
  }
  return true;
}

bool Cluster::drain(Tick budget) {
  run_until_idle();
  const Tick deadline = now_ + budget;
  while (!quiesced() && !events_.empty() &&
         events_.begin()->first.first <= deadline) {
    step();
  }
  run_until_idle();
  return quiesced();
}

// ---------------------------------------------------------------------------
// Client requests

NodeId Cluster::coordinator_for(const std::string& name) const {
  return place(fingerprint_object_name(name), topology_);
}

RequestId Cluster::submit(NodeId coordinator, Payload payload) {
  Envelope env;
  env.from = kClientId;
  env.to = coordinator;
  env.epoch = topology_.epoch();
  env.payload = std::move(payload);
  if (rebalance_from_) {
    // Stop-the-world: no client traffic until relocation has finished.
    env.id = next_msg_++;
    msg::Reply r;
    r.error = Errc::kRebalancePending;
    r.detail = "relocation has not completed";
    client_results_[env.id] = std::move(r);
    return env.id;
  }
  return send(std::move(env), TaskClass::kForeground);
}

RequestId Cluster::submit_put(const std::string& name, Slice data) {
  return submit(coordinator_for(name), msg::PutObject{name, std::move(data)});
}

RequestId Cluster::submit_get(const std::string& name) {
  return submit(coordinator_for(name), msg::GetObject{name});
}

RequestId Cluster::submit_del(const std::string& name) {
  return submit(coordinator_for(name), msg::DelObject{name});
}

std::optional<msg::Reply> Cluster::result(RequestId id) const {
  auto it = client_results_.find(id);
  if (it == client_results_.end()) return std::nullopt;
  return it->second;
}

msg::Reply Cluster::await(RequestId id) {
  run_until_idle();
  auto it = client_results_.find(id);
  if (it == client_results_.end()) {
    throw Error(Errc::kInvalidState, fmt::format("request #{} never completed", id));
  }
  msg::Reply r = std::move(it->second);
  client_results_.erase(it);
  if (!r.ok()) throw Error(*r.error, r.detail);
  return r;
}

msg::PutResult Cluster::put(const std::string& name, Bytes data) {
  auto buf = std::make_shared<const Bytes>(std::move(data));
  return std::get<msg::PutResult>(
      await(submit_put(name, Slice::whole(std::move(buf)))).body);
}

Bytes Cluster::get(const std::string& name) {
  const auto r = await(submit_get(name));
  const auto s = std::get<msg::ObjectData>(r.body).data.span();
  return Bytes(s.begin(), s.end());
}

void Cluster::del(const std::string& name) { await(submit_del(name)); }

// ---------------------------------------------------------------------------
// Maintenance

void Cluster::require_all_up(std::string_view what) const {
  for (const auto& [id, h] : nodes_) {
    if (!h.node) {
      throw Error(Errc::kNotQuiesced,
                  fmt::format("{} needs every node up; node {} is down", what,
                              id.value));
    }
  }
}

std::size_t Cluster::gc_cycle() {
  require_all_up("gc");
  if (rebalance_from_) {
    throw Error(Errc::kRebalancePending, "gc while relocation is pending");
  }
  if (!drain()) throw Error(Errc::kNotQuiesced, "cluster did not drain");
  for (auto& [id, h] : nodes_) h.node->scrub_send();
  run_until_idle();
  for (auto& [id, h] : nodes_) h.node->scrub_apply();
  for (auto& [id, h] : nodes_) h.node->gc_collect();
  advance(config_.gc_threshold);
  std::size_t reclaimed = 0;
  for (auto& [id, h] : nodes_) reclaimed += h.node->gc_reclaim(now_);
  emit(std::nullopt, "gc", fmt::format("reclaimed {}", reclaimed));
  return reclaimed;
}

void Cluster::publish(Topology next) {
  topology_ = std::move(next);
  for (auto& [id, h] : nodes_) {
    if (h.node) h.node->set_topology(topology_);
  }
  emit(std::nullopt, "topology", fmt::format("epoch {} nodes {}", topology_.epoch(),
                                             topology_.size()));
}

NodeId Cluster::add_node(double weight) {
  if (config_.mode == DedupMode::kDiskLocal) {
    throw Error(Errc::kInvalidState, "disk-local mode does not relocate data");
  }
  rebalance();
  if (rebalance_from_) {
    throw Error(Errc::kRebalancePending, "previous relocation still pending");
  }
  require_all_up("add-node");
  if (!drain()) throw Error(Errc::kNotQuiesced, "cluster did not drain");
  require_all_up("add-node");
  const NodeId id{next_node_id_};
  Topology next = change_topology(topology_, AddNode{id, weight});
  ++next_node_id_;
  rebalance_from_ = topology_;
  topology_ = next;
  nodes_[id].incarnation = 0;
  start_node(id);
  publish(std::move(next));
  relocate();
  return id;
}

void Cluster::remove_node(NodeId id) {
  if (config_.mode == DedupMode::kDiskLocal) {
    throw Error(Errc::kInvalidState, "disk-local mode does not relocate data");
  }
  rebalance();
  if (rebalance_from_) {
    throw Error(Errc::kRebalancePending, "previous relocation still pending");
  }
  require_all_up("remove-node");
  if (!drain()) throw Error(Errc::kNotQuiesced, "cluster did not drain");
  require_all_up("remove-node");
  Topology next = change_topology(topology_, RemoveNode{id});
  rebalance_from_ = topology_;
  retiring_.insert(id);
  publish(std::move(next));
  relocate();
}

void Cluster::rebalance() {
  if (!rebalance_from_) return;
  relocate();
}

void Cluster::relocate() {
  require_all_up("rebalance");
  StoredFingerprints stored;
  std::map<NodeId, std::vector<Move>> omap_moves;
  std::map<NodeId, std::size_t> failed_before;
  for (auto& [id, h] : nodes_) {
    std::vector<Fingerprint> fps = h.node->chunks().list();
    for (const auto& [fp, e] : h.node->shard().cit()) fps.push_back(fp);
    std::sort(fps.begin(), fps.end());
    fps.erase(std::unique(fps.begin(), fps.end()), fps.end());
    stored[id] = std::move(fps);

    std::vector<Fingerprint> objects;
    for (const auto& [ofp, e] : h.node->shard().omap()) objects.push_back(ofp);
    std::sort(objects.begin(), objects.end());
    for (const auto& ofp : objects) {
      const NodeId to = place(ofp, topology_);
      if (to != id) omap_moves[id].push_back(Move{ofp, id, to});
    }
    failed_before[id] = h.node->moves_failed();
  }
  const RelocationPlan plan = relocation_plan(stored, *rebalance_from_, topology_);
  std::map<NodeId, std::vector<Move>> chunk_moves;
  for (const auto& mv : plan.moves) chunk_moves[mv.from].push_back(mv);
  chunks_relocated_ += plan.moves.size();
  emit(std::nullopt, "rebalance",
       fmt::format("chunk moves {} omap moves {}", plan.moves.size(),
                   [&] {
                     std::size_t n = 0;
                     for (const auto& [id, v] : omap_moves) n += v.size();
                     return n;
                   }()));

  for (auto& [id, h] : nodes_) {
    const auto& cm = chunk_moves[id];
    const auto& om = omap_moves[id];
    if (cm.empty() && om.empty()) continue;
    h.node->execute_moves(cm, om);
  }
  run_until_idle();

  bool complete = true;
  for (auto& [id, h] : nodes_) {
    if (!h.node || h.node->moves_failed() != failed_before[id]) complete = false;
  }
  if (!complete) {
    emit(std::nullopt, "rebalance", "incomplete");
    return;
  }
  rebalance_from_.reset();
  for (NodeId id : retiring_) {
    nodes_.erase(id);
    std::filesystem::remove_all(root_ / fmt::format("node-{}", id.value));
  }
  retiring_.clear();
  emit(std::nullopt, "rebalance", "complete");
}

// ---------------------------------------------------------------------------
// Audit

AuditReport Cluster::audit() const {
  require_all_up("audit");
  if (!quiesced()) throw Error(Errc::kNotQuiesced, "traffic still in flight");
  if (rebalance_from_) {
    throw Error(Errc::kRebalancePending, "audit while relocation is pending");
  }
  AuditReport r;
  // Ground truth: references held by committed objects, per owning node.
  std::map<std::pair<NodeId, Fingerprint>, std::uint64_t> truth;
  for (const auto& [id, h] : nodes_) {
    for (const auto& [ofp, entry] : h.node->shard().omap()) {
      for (const auto& fp : entry.chunk_fps) {
        const NodeId owner =
            config_.mode == DedupMode::kDiskLocal ? id : place(fp, topology_);
        ++truth[{owner, fp}];
      }
    }
  }
  auto chunk_ok = [&](NodeId id, const Fingerprint& fp) {
    auto bytes = nodes_.at(id).node->chunks().read(fp);
    return bytes && fingerprint_chunk(*bytes) == fp;
  };

  for (const auto& [key, refs] : truth) {
    const auto& [id, fp] = key;
    auto hit = nodes_.find(id);
    if (hit == nodes_.end() || !hit->second.node) {
      ++r.dangling_refs;
      continue;
    }
    const Node& n = *hit->second.node;
    const auto entry = n.shard().cit_lookup(fp);
    if (!entry || !n.chunks().contains(fp)) ++r.dangling_refs;
    if (entry && entry->refcount != refs) ++r.refcount_mismatches;
    if (entry && entry->flag != CommitFlag::kValid) ++r.flag_violations;
  }
  for (const auto& [id, h] : nodes_) {
    const Node& n = *h.node;
    for (const auto& [fp, entry] : n.shard().cit()) {
      if (!truth.contains({id, fp})) ++r.orphan_chunks;
      if (entry.flag == CommitFlag::kValid && !chunk_ok(id, fp)) ++r.flag_violations;
    }
    for (const auto& fp : n.chunks().list()) {
      if (!n.shard().cit_lookup(fp)) ++r.orphan_chunks;
    }
  }
  for (const auto& [id, h] : nodes_) {
    for (const auto& [ofp, entry] : h.node->shard().omap()) {
      std::uint64_t length = 0;
      bool readable = true;
      for (const auto& fp : entry.chunk_fps) {
        const NodeId owner =
            config_.mode == DedupMode::kDiskLocal ? id : place(fp, topology_);
        const Node* n = node(owner);
        auto bytes = n ? n->chunks().read(fp) : std::nullopt;
        if (!bytes || fingerprint_chunk(*bytes) != fp) {
          readable = false;
          break;
        }
        length += bytes->size();
      }
      if (!readable || length != entry.logical_size) ++r.unreadable_objects;
    }
  }
  return r;
}

}  // namespace cwdedup
