#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cwdedup/fingerprint.h"

namespace cwdedup {

struct NodeId {
  std::uint32_t value = 0;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

using Epoch = std::uint64_t;

struct TopologyMember {
  NodeId id;
  double weight = 1.0;

  friend bool operator==(const TopologyMember&, const TopologyMember&) = default;
};

// Immutable epoch-numbered membership. Members are kept sorted by id.
class Topology {
 public:
  Topology() = default;
  Topology(Epoch epoch, std::vector<TopologyMember> members);

  // Epoch 0 with nodes 0..count-1 at weight 1.
  static Topology uniform(std::uint32_t count);

  Epoch epoch() const { return epoch_; }
  const std::vector<TopologyMember>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  bool contains(NodeId id) const;

  // Text manifest: "epoch N" followed by one "node_id weight" line per node.
  std::string manifest() const;
  static Topology parse_manifest(std::string_view text);

  friend bool operator==(const Topology&, const Topology&) = default;

 private:
  Epoch epoch_ = 0;
  std::vector<TopologyMember> members_;
};

struct AddNode {
  NodeId id;
  double weight = 1.0;
};
struct RemoveNode {
  NodeId id;
};
struct SetWeight {
  NodeId id;
  double weight = 1.0;
};
using TopologyChange = std::variant<AddNode, RemoveNode, SetWeight>;

// Weighted rendezvous (highest-random-weight) placement. Candidates are
// returned best-first; place() is the head of that list.
std::vector<NodeId> rank_candidates(const Fingerprint& fp, const Topology& topo);
NodeId place(const Fingerprint& fp, const Topology& topo);

Topology change_topology(const Topology& topo, const TopologyChange& change);

struct Move {
  Fingerprint fp;
  NodeId from;
  NodeId to;

  friend bool operator==(const Move&, const Move&) = default;
};

struct RelocationPlan {
  std::vector<Move> moves;  // ordered by (from, fp)

  bool empty() const { return moves.empty(); }
};

using StoredFingerprints = std::map<NodeId, std::vector<Fingerprint>>;

// Every fingerprint whose holder differs from place(fp, next). Throws
// kStaleTopology unless next.epoch() == prev.epoch() + 1.
RelocationPlan relocation_plan(const StoredFingerprints& stored,
                               const Topology& prev, const Topology& next);

}  // namespace cwdedup

template <>
struct std::hash<cwdedup::NodeId> {
  std::size_t operator()(cwdedup::NodeId id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
