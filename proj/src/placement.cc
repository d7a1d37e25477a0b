#include "cwdedup/placement.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t load_le(const std::uint8_t* p, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

// hash(fp || node_id), folded over all 20 digest bytes.
std::uint64_t pair_hash(const Fingerprint& fp, NodeId node) {
  const std::uint8_t* d = fp.digest().data();
  std::uint64_t h = splitmix64(0x6a09e667f3bcc908ULL ^ node.value);
  h = splitmix64(h ^ load_le(d, 8));
  h = splitmix64(h ^ load_le(d + 8, 8));
  h = splitmix64(h ^ load_le(d + 16, 4));
  return h;
}

// Larger is better. u^(1/w) ordered via ln(u)/w, with u uniform in (0,1).
double score(const Fingerprint& fp, const TopologyMember& m) {
  const double u =
      (static_cast<double>(pair_hash(fp, m.id) >> 11) + 0.5) * 0x1.0p-53;
  return std::log(u) / m.weight;
}

void check_weight(double weight) {
  if (!(weight > 0.0) || !std::isfinite(weight)) {
    throw Error(Errc::kTopologyChange,
                fmt::format("node weight must be positive, got {}", weight));
  }
}

}  // namespace

Topology::Topology(Epoch epoch, std::vector<TopologyMember> members)
    : epoch_(epoch), members_(std::move(members)) {
  std::sort(members_.begin(), members_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < members_.size(); ++i) {
    check_weight(members_[i].weight);
    if (i > 0 && members_[i].id == members_[i - 1].id) {
      throw Error(Errc::kTopologyChange,
                  fmt::format("duplicate node {}", members_[i].id.value));
    }
  }
}

Topology Topology::uniform(std::uint32_t count) {
  std::vector<TopologyMember> members;
  for (std::uint32_t i = 0; i < count; ++i) members.push_back({NodeId{i}, 1.0});
  return Topology(0, std::move(members));
}

bool Topology::contains(NodeId id) const {
  return std::any_of(members_.begin(), members_.end(),
                     [id](const auto& m) { return m.id == id; });
}

std::string Topology::manifest() const {
  std::string out = fmt::format("epoch {}\n", epoch_);
  for (const auto& m : members_) {
    out += fmt::format("{} {}\n", m.id.value, m.weight);
  }
  return out;
}

Topology Topology::parse_manifest(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::optional<Epoch> epoch;
  std::vector<TopologyMember> members;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    if (!epoch) {
      std::string word;
      Epoch e = 0;
      if (!(fields >> word >> e) || word != "epoch") {
        throw Error(Errc::kInvalidArgument,
                    fmt::format("manifest line {}: expected 'epoch N'", lineno));
      }
      epoch = e;
      continue;
    }
    std::uint32_t id = 0;
    double weight = 0;
    if (!(fields >> id >> weight)) {
      throw Error(Errc::kInvalidArgument,
                  fmt::format("manifest line {}: expected 'node_id weight'",
                              lineno));
    }
    members.push_back({NodeId{id}, weight});
  }
  if (!epoch) throw Error(Errc::kInvalidArgument, "manifest missing epoch line");
  return Topology(*epoch, std::move(members));
}

std::vector<NodeId> rank_candidates(const Fingerprint& fp,
                                    const Topology& topo) {
  if (topo.empty()) throw Error(Errc::kNoNodes, "topology has no nodes");
  std::vector<std::pair<double, NodeId>> scored;
  scored.reserve(topo.size());
  for (const auto& m : topo.members()) scored.emplace_back(score(fp, m), m.id);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<NodeId> out;
  out.reserve(scored.size());
  for (const auto& [s, id] : scored) out.push_back(id);
  return out;
}

NodeId place(const Fingerprint& fp, const Topology& topo) {
  if (topo.empty()) throw Error(Errc::kNoNodes, "topology has no nodes");
  const TopologyMember* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& m : topo.members()) {
    const double s = score(fp, m);
    if (best == nullptr || s > best_score) {
      best = &m;
      best_score = s;
    }
  }
  return best->id;
}

Topology change_topology(const Topology& topo, const TopologyChange& change) {
  auto members = topo.members();
  auto find = [&members](NodeId id) {
    return std::find_if(members.begin(), members.end(),
                        [id](const auto& m) { return m.id == id; });
  };
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, AddNode>) {
          if (find(c.id) != members.end()) {
            throw Error(Errc::kTopologyChange,
                        fmt::format("node {} already a member", c.id.value));
          }
          check_weight(c.weight);
          members.push_back({c.id, c.weight});
        } else if constexpr (std::is_same_v<T, RemoveNode>) {
          auto it = find(c.id);
          if (it == members.end()) {
            throw Error(Errc::kTopologyChange,
                        fmt::format("node {} is not a member", c.id.value));
          }
          if (members.size() == 1) {
            throw Error(Errc::kTopologyChange, "cannot remove the last node");
          }
          members.erase(it);
        } else {
          auto it = find(c.id);
          if (it == members.end()) {
            throw Error(Errc::kTopologyChange,
                        fmt::format("node {} is not a member", c.id.value));
          }
          check_weight(c.weight);
          it->weight = c.weight;
        }
      },
      change);
  return Topology(topo.epoch() + 1, std::move(members));
}

RelocationPlan relocation_plan(const StoredFingerprints& stored,
                               const Topology& prev, const Topology& next) {
  if (next.epoch() != prev.epoch() + 1) {
    throw Error(Errc::kStaleTopology,
                fmt::format("plan needs consecutive epochs, got {} -> {}",
                            prev.epoch(), next.epoch()));
  }
  RelocationPlan plan;
  std::set<Fingerprint> seen;
  for (const auto& [holder, fps] : stored) {
    std::vector<Fingerprint> sorted = fps;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (const auto& fp : sorted) {
      const NodeId target = place(fp, next);
      if (target == holder) continue;
      if (!seen.insert(fp).second) {
        throw Error(Errc::kInvalidArgument,
                    fmt::format("fingerprint {} held by several misplaced nodes",
                                fp.hex()));
      }
      plan.moves.push_back({fp, holder, target});
    }
  }
  return plan;
}

}  // namespace cwdedup
