#include "cwdedup/crash_fuzz.h"

#include <fmt/format.h>

#include <map>
#include <memory>
#include <set>

#include "cwdedup/cluster.h"
#include "cwdedup/error.h"
#include "cwdedup/workload.h"

namespace cwdedup {

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Step {
  enum Kind { kPut, kDel, kAddNode } kind = kPut;
  std::string name;
  std::shared_ptr<const Bytes> data;
};

using Plan = std::vector<std::vector<Step>>;

Plan make_plan(std::uint64_t seed, std::size_t chunk_size) {
  std::uint64_t state = seed;
  auto rnd = [&](std::uint64_t n) { return splitmix(state) % n; };
  ContentGenerator content(seed, chunk_size);
  constexpr std::uint32_t kDedup[] = {0, 30, 60, 90};

  Plan plan;
  const std::size_t batches = 6 + rnd(4);
  const std::size_t add_at = 2 + rnd(batches - 3);
  std::vector<std::string> names;
  int next = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<Step> batch;
    if (b == add_at) {
      batch.push_back(Step{Step::kAddNode, {}, {}});
      plan.push_back(std::move(batch));
      continue;
    }
    std::vector<std::string> added;
    const std::size_t ops = 1 + rnd(3);
    for (std::size_t i = 0; i < ops; ++i) {
      if (!names.empty() && rnd(4) == 0) {
        batch.push_back(Step{Step::kDel, names[rnd(names.size())], {}});
        continue;
      }
      std::uint64_t size = rnd(5) * chunk_size;
      if (rnd(2) == 0) size += rnd(chunk_size);
      Step s{Step::kPut, fmt::format("f{}", next++), {}};
      s.data = std::make_shared<const Bytes>(content.next_object(size, kDedup[rnd(4)]));
      added.push_back(s.name);
      batch.push_back(std::move(s));
    }
    names.insert(names.end(), added.begin(), added.end());
    plan.push_back(std::move(batch));
  }
  return plan;
}

struct Expectation {
  enum State { kAbsent, kPresent, kMaybe } state = kAbsent;
  std::shared_ptr<const Bytes> data;
};

struct RunResult {
  std::map<std::string, Expectation> expect;
  bool crashed = false;
};

void settle(Cluster& cluster, RunResult& out) {
  const auto down = cluster.crashed_nodes();
  if (!down.empty()) out.crashed = true;
  for (NodeId id : down) cluster.recover(id);
  if (cluster.rebalance_pending()) cluster.rebalance();
}

RunResult run_plan(Cluster& cluster, const Plan& plan) {
  RunResult out;
  for (const auto& batch : plan) {
    if (batch.size() == 1 && batch[0].kind == Step::kAddNode) {
      try {
        cluster.add_node();
      } catch (const Error&) {
      }
      settle(cluster, out);
      continue;
    }
    std::vector<RequestId> ids;
    for (const auto& s : batch) {
      ids.push_back(s.kind == Step::kPut
                        ? cluster.submit_put(s.name, Slice::whole(s.data))
                        : cluster.submit_del(s.name));
    }
    cluster.run_until_idle();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& s = batch[i];
      const auto r = cluster.result(ids[i]);
      const bool ok = r && r->ok();
      auto& e = out.expect[s.name];
      if (s.kind == Step::kPut) {
        e.data = s.data;
        e.state = ok ? Expectation::kPresent : Expectation::kMaybe;
      } else if (ok) {
        e.state = Expectation::kAbsent;
      } else if (e.state == Expectation::kPresent) {
        e.state = Expectation::kMaybe;
      }
    }
    settle(cluster, out);
  }
  return out;
}

// Returns an empty string when the cluster passes every check.
std::string verify(Cluster& cluster, const RunResult& run) {
  for (NodeId id : cluster.crashed_nodes()) cluster.recover(id);
  if (cluster.rebalance_pending()) cluster.rebalance();
  if (cluster.rebalance_pending()) return "relocation did not complete";
  if (!cluster.drain()) return "cluster did not drain";
  cluster.gc_cycle();
  const AuditReport audit = cluster.audit();
  if (!audit.clean()) return "audit: " + describe(audit);

  for (const auto& [name, e] : run.expect) {
    std::optional<Bytes> got;
    try {
      got = cluster.get(name);
    } catch (const Error& err) {
      if (err.code() != Errc::kObjectNotFound) {
        return fmt::format("get {}: {}", name, err.what());
      }
    }
    if (e.state == Expectation::kPresent && !got) {
      return fmt::format("committed object {} lost", name);
    }
    if (e.state == Expectation::kAbsent && got) {
      return fmt::format("deleted object {} still readable", name);
    }
    if (got && *got != *e.data) return fmt::format("object {} differs", name);
  }

  std::set<Fingerprint> referenced;
  std::set<Fingerprint> physical;
  for (NodeId id : cluster.node_ids()) {
    const Node* n = cluster.node(id);
    for (const auto& [ofp, entry] : n->shard().omap()) {
      referenced.insert(entry.chunk_fps.begin(), entry.chunk_fps.end());
    }
    for (const auto& fp : n->chunks().list()) {
      if (!physical.insert(fp).second) {
        return fmt::format("chunk {} stored twice", fp.hex());
      }
    }
  }
  if (referenced != physical) {
    return fmt::format("physical chunks {} != referenced chunks {}", physical.size(),
                       referenced.size());
  }
  return {};
}

}  // namespace

std::size_t FuzzReport::violations() const {
  std::size_t n = 0;
  for (const auto& l : labels) n += l.violations;
  return n;
}

bool FuzzReport::ok() const {
  for (const auto& l : labels) {
    if (l.violations > 0 || l.triggered == 0) return false;
  }
  return true;
}

FuzzReport fuzz_crashes(const FuzzOptions& options,
                        const std::function<void(const LabelResult&)>& progress) {
  if (options.scratch.empty()) {
    throw Error(Errc::kInvalidArgument, "fuzzing needs a scratch directory");
  }
  SimConfig config;
  config.node_count = options.nodes;
  config.chunk_size = options.chunk_size;
  const auto dry_root = options.scratch / "dry";
  const auto real_root = options.scratch / "real";

  FuzzReport report;
  for (CrashLabel label : options.labels) {
    LabelResult lr;
    lr.label = label;
    std::uint64_t state = options.seed ^ (static_cast<std::uint64_t>(label) << 56);
    // Bounded so a label that no plan can reach fails instead of spinning.
    const std::size_t max_attempts = options.per_label * 20 + 100;
    while (lr.triggered < options.per_label && lr.attempts < max_attempts) {
      ++lr.attempts;
      const std::uint64_t plan_seed = splitmix(state);
      const Plan plan = make_plan(plan_seed, options.chunk_size);
      config.seed = plan_seed;

      std::vector<std::pair<NodeId, std::uint64_t>> hits;
      std::uint64_t total = 0;
      std::filesystem::remove_all(dry_root);
      {
        Cluster dry(config, dry_root);
        run_plan(dry, plan);
        for (const auto& [key, n] : dry.label_hits()) {
          if (key.second != label) continue;
          hits.emplace_back(key.first, n);
          total += n;
        }
      }
      std::filesystem::remove_all(dry_root);
      if (total == 0) continue;

      std::uint64_t pick = splitmix(state) % total;
      CrashPoint cp{label, {}, 1};
      for (const auto& [node, n] : hits) {
        if (pick < n) {
          cp.target = node;
          cp.trigger = pick + 1;
          break;
        }
        pick -= n;
      }

      std::filesystem::remove_all(real_root);
      std::string violation;
      bool crashed = false;
      {
        Cluster real(config, real_root);
        real.arm(cp);
        try {
          const RunResult run = run_plan(real, plan);
          crashed = run.crashed;
          violation = verify(real, run);
        } catch (const Error& e) {
          violation = fmt::format("{}: {}", errc_name(e.code()), e.what());
        }
      }
      std::filesystem::remove_all(real_root);
      if (!crashed && violation.empty()) continue;
      if (crashed) ++lr.triggered;
      if (!violation.empty()) {
        ++lr.violations;
        if (lr.first_violation.empty()) {
          lr.first_violation = fmt::format("plan {:#x} node {} hit {}: {}", plan_seed,
                                           cp.target.value, cp.trigger, violation);
        }
      }
    }
    if (progress) progress(lr);
    report.labels.push_back(std::move(lr));
  }
  return report;
}

}  // namespace cwdedup
