// Acceptance suite: each criterion prints one PASS/FAIL line with the
// measured values. Exit status is non-zero if any criterion fails.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cwdedup/cluster.h"
#include "cwdedup/crash_fuzz.h"
#include "cwdedup/error.h"
#include "cwdedup/record_log.h"
#include "cwdedup/script.h"
#include "cwdedup/workload.h"
#include "test_util.h"

namespace cwdedup {
namespace {

using testing::TempDir;

// Pinned tolerances.
constexpr double kSavingsSpreadPct = 1.0;
constexpr double kMovedMin = 0.16;
constexpr double kMovedMax = 0.24;
constexpr std::size_t kCrashesPerLabel = 200;
constexpr std::uint64_t kLookupChunks = 10000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct BenchRun {
  SavingsReport report;
  std::uint64_t oracle_bytes = 0;
};

WorkloadSpec savings_workload() {
  WorkloadSpec spec;
  spec.total_bytes = 256ull << 20;
  spec.object_size = 4ull << 20;
  spec.chunk_size = 512 << 10;
  spec.dedup_percent = 75;
  spec.seed = 1;
  return spec;
}

BenchRun run_savings(const WorkloadSpec& spec, std::uint32_t nodes, DedupMode mode) {
  TempDir dir;
  SimConfig config;
  config.node_count = nodes;
  config.chunk_size = spec.chunk_size;
  config.mode = mode;
  // Whole-object reads are not part of this measurement.
  config.verify_reads = false;
  Cluster cluster(config, dir.path());
  DedupOracle oracle(spec.chunk_size);
  generate(spec, [&](const std::string& name, Bytes data) {
    oracle.add(data);
    cluster.put(name, std::move(data));
  });
  if (!cluster.drain()) throw Error(Errc::kNotQuiesced, "cluster did not drain");
  return {savings_report(cluster, oracle.unique_bytes()), oracle.unique_bytes()};
}

Outcome savings_node_invariance() {
  const auto spec = savings_workload();
  std::vector<double> savings;
  bool exact = true;
  std::string values;
  for (std::uint32_t n : {1u, 2u, 4u, 8u}) {
    const auto r = run_savings(spec, n, DedupMode::kClusterWide);
    savings.push_back(r.report.savings_percent);
    exact = exact && r.report.physical_bytes == r.oracle_bytes;
    values += fmt::format("{}n={} {:.2f}% phys={} oracle={}", values.empty() ? "" : ", ", n,
                          r.report.savings_percent, r.report.physical_bytes,
                          r.oracle_bytes);
  }
  const auto [lo, hi] = std::minmax_element(savings.begin(), savings.end());
  const double spread = *hi - *lo;
  return {spread <= kSavingsSpreadPct && exact,
          fmt::format("spread {:.3f} <= {:.1f} pts, physical == oracle: {}; {}", spread,
                      kSavingsSpreadPct, exact ? "yes" : "no", values)};
}

Outcome disk_local_decline() {
  const auto spec = savings_workload();
  std::vector<double> savings;
  std::string values;
  for (std::uint32_t n : {1u, 2u, 4u, 8u}) {
    const auto r = run_savings(spec, n, DedupMode::kDiskLocal);
    savings.push_back(r.report.savings_percent);
    values += fmt::format("{}n={} {:.2f}%", values.empty() ? "" : ", ", n,
                          r.report.savings_percent);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < savings.size(); ++i) {
    decreasing = decreasing && savings[i] < savings[i - 1];
  }
  return {decreasing, "strictly decreasing: " + values};
}

std::uint64_t count_lookups(DedupMode mode) {
  TempDir dir;
  SimConfig config;
  config.node_count = 8;
  config.chunk_size = 4096;
  config.mode = mode;
  Cluster cluster(config, dir.path());
  ContentGenerator gen(11, config.chunk_size);
  const std::uint64_t per_object = 16;
  for (std::uint64_t i = 0; i < kLookupChunks / per_object; ++i) {
    cluster.put(object_name(i), gen.next_object(per_object * config.chunk_size, 50));
  }
  cluster.drain();
  if (gen.chunks_emitted() != kLookupChunks) throw Error(Errc::kSpec, "chunk count drifted");
  return cluster.counters().lookups();
}

Outcome single_lookup() {
  const auto wide = count_lookups(DedupMode::kClusterWide);
  const auto broadcast = count_lookups(DedupMode::kBroadcastLookup);
  return {wide == kLookupChunks && broadcast == 8 * kLookupChunks,
          fmt::format("cluster-wide {} (want {}), broadcast {} (want {})", wide, kLookupChunks,
                      broadcast, 8 * kLookupChunks)};
}

Outcome crash_fuzz() {
  TempDir dir;
  FuzzOptions opts;
  opts.seed = 2024;
  opts.per_label = kCrashesPerLabel;
  opts.scratch = dir.path();
  const FuzzReport report = fuzz_crashes(opts);
  bool pass = true;
  std::size_t min_triggered = SIZE_MAX;
  std::string failure;
  for (const auto& l : report.labels) {
    min_triggered = std::min(min_triggered, l.triggered);
    if (l.violations > 0 || l.triggered < kCrashesPerLabel) {
      pass = false;
      if (failure.empty()) {
        failure = fmt::format("; {} triggered {} violations {} {}",
                              crash_label_name(l.label), l.triggered, l.violations,
                              l.first_violation);
      }
    }
  }
  return {pass, fmt::format("{} labels, min crashes per label {} (want >= {}), "
                            "violations {}{}",
                            report.labels.size(), min_triggered, kCrashesPerLabel,
                            report.violations(), failure)};
}

Outcome duplicate_write_repair() {
  TempDir dir;
  SimConfig config;
  config.chunk_size = 4096;
  Cluster c(config, dir.path());
  const Bytes data = testing::random_bytes(4096, 77);
  const Fingerprint fp = fingerprint_chunk(data);
  const NodeId owner = place(fp, c.topology());
  const auto chunk_path = c.node(owner)->chunks().path_for(fp);

  // The owner dies after creating the CIT row, before acknowledging.
  c.arm({CrashLabel::kAfterCitBeforeAck, owner, 1});
  bool first_failed = false;
  try {
    c.put("first", data);
  } catch (const Error& e) {
    first_failed = e.code() == Errc::kObjectWriteFailed;
  }
  c.run_until_idle();
  if (c.alive(owner)) return {false, "armed crash did not fire"};

  // The chunk file is lost while the node is down.
  std::filesystem::remove(chunk_path);
  c.recover(owner);
  const auto before = c.node(owner)->shard().cit_lookup(fp);
  const bool stale_row = before && before->flag == CommitFlag::kInvalid;
  const bool file_gone = !c.node(owner)->chunks().contains(fp);

  const auto r = c.put("second", data);
  const auto after = c.node(owner)->shard().cit_lookup(fp);
  const bool deduped = r.chunks_deduped == 1;
  const bool valid = after && after->flag == CommitFlag::kValid;
  const bool readable = c.get("second") == data;
  c.drain();
  c.gc_cycle();
  const bool clean = c.audit().clean();
  return {first_failed && stale_row && file_gone && deduped && valid && readable && clean,
          fmt::format("first put failed {}, stale flag-0 row {}, chunk file gone {}, "
                      "duplicate deduped {}, flag 1 {}, read ok {}, audit clean {}",
                      first_failed, stale_row, file_gone, deduped, valid, readable, clean)};
}

// Every field name in every persisted shard record of every node.
std::vector<std::string> shard_field_names(const Cluster& c) {
  std::vector<std::string> names;
  for (NodeId id : c.node_ids()) {
    const auto& shard = c.node(id)->shard();
    const std::pair<shard_codec::Table, std::filesystem::path> files[] = {
        {shard_codec::Table::kCit, shard.cit_log_path()},
        {shard_codec::Table::kCit, shard.cit_snap_path()},
        {shard_codec::Table::kOmap, shard.omap_log_path()},
        {shard_codec::Table::kOmap, shard.omap_snap_path()},
    };
    for (const auto& [table, path] : files) {
      RecordLog::replay(path, [&, table = table](std::span<const std::uint8_t> payload) {
        for (const auto& f : shard_codec::walk(table, payload)) names.emplace_back(f.name);
      });
    }
  }
  return names;
}

Outcome rebalance_movement() {
  TempDir dir;
  SimConfig config;
  config.chunk_size = 4096;
  config.node_count = 4;
  Cluster c(config, dir.path());
  ContentGenerator gen(21, config.chunk_size);
  std::map<std::string, Bytes> objects;
  for (std::size_t i = 0; i < 500; ++i) {
    Bytes data = gen.next_object(20 * config.chunk_size, 0);
    c.put(object_name(i), data);
    objects.emplace(object_name(i), std::move(data));
  }
  c.drain();
  std::size_t stored = 0;
  for (NodeId id : c.node_ids()) stored += c.node(id)->chunks().count();

  const auto before = c.chunks_relocated();
  c.add_node();
  const double moved = static_cast<double>(c.chunks_relocated() - before) / stored;
  c.drain();
  std::size_t unreadable = 0;
  for (const auto& [name, data] : objects) {
    try {
      if (c.get(name) != data) ++unreadable;
    } catch (const Error&) {
      ++unreadable;
    }
  }
  std::size_t fields = 0;
  std::size_t node_fields = 0;
  for (std::string name : shard_field_names(c)) {
    ++fields;
    std::transform(name.begin(), name.end(), name.begin(), ::tolower);
    if (name.find("node") != std::string::npos) ++node_fields;
  }
  const bool pass = moved >= kMovedMin && moved <= kMovedMax && unreadable == 0 &&
                    node_fields == 0 && fields > 0 && !c.rebalance_pending();
  return {pass, fmt::format("{} chunks, moved fraction {:.4f} in [{:.2f}, {:.2f}], "
                            "unreadable {}, node-id fields {} of {} scanned",
                            stored, moved, kMovedMin, kMovedMax, unreadable, node_fields,
                            fields)};
}

std::string random_script(std::mt19937_64& rng) {
  std::string s;
  std::uint32_t nodes = 4;
  int next_object = 0;
  const int steps = 15 + static_cast<int>(rng() % 20);
  for (int i = 0; i < steps; ++i) {
    switch (rng() % 10) {
      case 0:
      case 1:
      case 2:
        s += fmt::format("put o{} {} {}\n", next_object++, rng() % 40000, rng() % 101);
        break;
      case 3:
        s += fmt::format("get o{}\n", next_object == 0 ? 0 : rng() % next_object);
        break;
      case 4:
        s += fmt::format("del o{}\n", next_object == 0 ? 0 : rng() % next_object);
        break;
      case 5: {
        const auto label = kAllCrashLabels[rng() % kAllCrashLabels.size()];
        // Initial nodes always exist; add-node may fail while a node is down.
        const auto node = rng() % 4;
        s += fmt::format("crash {} {} {}\n", node, crash_label_name(label), 1 + rng() % 3);
        s += fmt::format("put o{} {} {}\n", next_object++, 4096 + rng() % 30000, rng() % 101);
        s += fmt::format("recover {}\n", node);
        break;
      }
      case 6:
        if (nodes++ < 7) s += "add-node\n";
        break;
      case 7:
        s += "gc\n";
        break;
      case 8:
        s += "audit\n";
        break;
      default:
        s += "stats\n";
        break;
    }
  }
  return s;
}

Outcome trace_determinism() {
  std::mt19937_64 rng(0xace);
  TempDir dir;
  int identical = 0;
  std::size_t events = 0;
  std::size_t crashes = 0;
  std::string first_diff;
  for (int pair = 0; pair < 20; ++pair) {
    SimConfig config;
    config.seed = rng();
    config.chunk_size = 4096;
    const std::string script = random_script(rng);
    const auto a = sim_run(config, script, dir / "a");
    const auto b = sim_run(config, script, dir / "b");
    events += a.trace.size();
    for (const auto& line : a.trace) crashes += line.find("\"kind\":\"crash\"") != std::string::npos;
    if (a.trace == b.trace && !a.trace.empty()) {
      ++identical;
    } else if (first_diff.empty()) {
      first_diff = fmt::format("; pair {} seed {} differs", pair, config.seed);
    }
  }
  return {identical == 20,
          fmt::format("{}/20 pairs byte-identical, {} events and {} crashes in total{}",
                      identical, events, crashes, first_diff)};
}

}  // namespace
}  // namespace cwdedup

int main() {
  using cwdedup::Outcome;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"savings-node-invariance", cwdedup::savings_node_invariance},
      {"disk-local-decline", cwdedup::disk_local_decline},
      {"single-lookup-messages", cwdedup::single_lookup},
      {"crash-consistency-fuzz", cwdedup::crash_fuzz},
      {"duplicate-write-repair", cwdedup::duplicate_write_repair},
      {"rebalance-minimal-movement", cwdedup::rebalance_movement},
      {"trace-determinism", cwdedup::trace_determinism},
  };
  int failures = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    fmt::print("{} AC{} {} ({:.1f}s): {}\n", o.pass ? "PASS" : "FAIL", index, name, secs,
               o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
