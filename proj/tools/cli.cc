#include "cli.h"

#include <fmt/format.h>
#include <stdlib.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "cwdedup/cluster.h"
#include "cwdedup/crash_fuzz.h"
#include "cwdedup/error.h"
#include "cwdedup/script.h"
#include "cwdedup/workload.h"

namespace cwdedup::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

// Failure that carries its own exit code and error-line name.
struct CliFailure {
  int exit_code;
  std::string code;
  std::string message;
};

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::kUninitialized:
      return kExitUninitialized;
    case Errc::kObjectNotFound:
      return kExitUnknownObject;
    case Errc::kInvalidArgument:
    case Errc::kSpec:
    case Errc::kScript:
    case Errc::kInvalidCrashPoint:
      return kExitInvalidFlags;
    case Errc::kShardIo:
    case Errc::kObjectWriteFailed:
      return kExitWriteFailure;
    default:
      return kExitGeneric;
  }
}

std::string quote(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliFailure{kExitGeneric, "io", fmt::format("cannot read {}", path.string())};
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
      throw CliFailure{kExitWriteFailure, "io", fmt::format("cannot write {}", tmp.string())};
    }
  }
  fs::rename(tmp, path);
}

// --- persisted cluster description

json config_to_json(const SimConfig& c) {
  json j;
  j["version"] = kFormatVersion;
  j["seed"] = c.seed;
  j["node_count"] = c.node_count;
  j["chunk_size"] = c.chunk_size;
  j["gc_threshold"] = c.gc_threshold;
  j["consistency_period"] = c.consistency_period;
  j["delay_min"] = c.delay.min;
  j["delay_max"] = c.delay.max;
  j["mode"] = std::string(mode_name(c.mode));
  j["verify_reads"] = c.verify_reads;
  return j;
}

SimConfig config_from_json(const json& j) {
  if (j.at("version").get<int>() != kFormatVersion) {
    throw Error(Errc::kInvalidState, "unsupported cluster.json version");
  }
  SimConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.node_count = j.at("node_count").get<std::uint32_t>();
  c.chunk_size = j.at("chunk_size").get<std::size_t>();
  c.gc_threshold = j.at("gc_threshold").get<Tick>();
  c.consistency_period = j.at("consistency_period").get<Tick>();
  c.delay.min = j.at("delay_min").get<Tick>();
  c.delay.max = j.at("delay_max").get<Tick>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.verify_reads = j.at("verify_reads").get<bool>();
  return c;
}

json state_to_json(const ClusterState& s) {
  json j;
  j["topology"] = s.topology.manifest();
  j["rebalance_from"] = s.rebalance_from ? json(s.rebalance_from->manifest()) : json();
  j["retiring"] = json::array();
  for (NodeId id : s.retiring) j["retiring"].push_back(id.value);
  j["incarnations"] = json::object();
  for (const auto& [id, inc] : s.incarnations) {
    j["incarnations"][std::to_string(id.value)] = inc;
  }
  j["next_node_id"] = s.next_node_id;
  j["tick"] = s.tick;
  j["epoch_runs"] = s.epoch_runs;
  return j;
}

ClusterState state_from_json(const json& j) {
  ClusterState s;
  s.topology = Topology::parse_manifest(j.at("topology").get<std::string>());
  if (!j.at("rebalance_from").is_null()) {
    s.rebalance_from = Topology::parse_manifest(j.at("rebalance_from").get<std::string>());
  }
  for (const auto& id : j.at("retiring")) s.retiring.push_back(NodeId{id.get<std::uint32_t>()});
  for (const auto& [key, inc] : j.at("incarnations").items()) {
    s.incarnations[NodeId{static_cast<std::uint32_t>(std::stoul(key))}] =
        inc.get<std::uint32_t>();
  }
  s.next_node_id = j.at("next_node_id").get<std::uint32_t>();
  s.tick = j.at("tick").get<Tick>();
  s.epoch_runs = j.at("epoch_runs").get<std::uint64_t>();
  return s;
}

struct Counters {
  std::map<std::string, std::uint64_t> sent;
  std::uint64_t dropped = 0;
  std::uint64_t runs = 0;

  void add(const BusCounters& c) {
    for (std::size_t k = 0; k < kMsgKindCount; ++k) {
      sent[std::string(kind_name(static_cast<MsgKind>(k)))] += c.sent[k];
    }
    dropped += c.dropped;
    ++runs;
  }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& [k, v] : sent) n += v;
    return n;
  }
  std::uint64_t of(std::string_view kind) const {
    auto it = sent.find(std::string(kind));
    return it == sent.end() ? 0 : it->second;
  }
};

Counters load_counters(const fs::path& path) {
  Counters c;
  if (!fs::exists(path)) return c;
  const json j = json::parse(read_file(path));
  for (const auto& [k, v] : j.at("sent").items()) c.sent[k] = v.get<std::uint64_t>();
  c.dropped = j.at("dropped").get<std::uint64_t>();
  c.runs = j.at("runs").get<std::uint64_t>();
  return c;
}

void save_counters(const fs::path& path, const Counters& c) {
  json j;
  j["sent"] = c.sent;
  j["dropped"] = c.dropped;
  j["runs"] = c.runs;
  write_file_atomic(path, j.dump(2) + "\n");
}

// A cluster opened from disk for one command and written back afterwards.
class Session {
 public:
  Session(const fs::path& root, std::optional<std::uint64_t> seed) : root_(root) {
    if (!fs::exists(meta_path())) {
      throw Error(Errc::kUninitialized,
                  fmt::format("no cluster at {}; run init first", root.string()));
    }
    const json meta = json::parse(read_file(meta_path()));
    SimConfig config = config_from_json(meta.at("config"));
    if (seed) config.seed = *seed;
    ClusterState state = state_from_json(meta.at("state"));
    ++state.epoch_runs;
    seed_ = meta.at("config").at("seed").get<std::uint64_t>();
    cluster_.emplace(config, root_ / "nodes", std::move(state));
  }

  Cluster& cluster() { return *cluster_; }

  void save() {
    cluster_->drain();
    json meta;
    SimConfig config = cluster_->config();
    config.seed = seed_;
    meta["config"] = config_to_json(config);
    meta["state"] = state_to_json(cluster_->state());
    write_file_atomic(meta_path(), meta.dump(2) + "\n");
    Counters c = load_counters(stats_path());
    c.add(cluster_->counters());
    save_counters(stats_path(), c);
  }

  fs::path meta_path() const { return root_ / "cluster.json"; }
  fs::path stats_path() const { return root_ / "stats.json"; }

 private:
  fs::path root_;
  std::uint64_t seed_ = 1;
  std::optional<Cluster> cluster_;
};

fs::path make_scratch() {
  std::string tmpl = (fs::temp_directory_path() / "cwdedup-scratch-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) {
    throw CliFailure{kExitWriteFailure, "io", "cannot create scratch directory"};
  }
  return tmpl;
}

struct ScratchDir {
  fs::path path = make_scratch();
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::size_t size_flag(const std::string& text, const char* flag) {
  try {
    return static_cast<std::size_t>(parse_size(text));
  } catch (const Error&) {
    throw CliFailure{kExitInvalidFlags, "invalid-flags",
                     fmt::format("{}: bad size '{}'", flag, text)};
  }
}

// --- command option holders

struct Globals {
  std::string root;
  bool json = false;
  std::uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;

  std::optional<std::uint64_t> seed_override() const {
    return seed_opt && seed_opt->count() > 0 ? std::optional(seed) : std::nullopt;
  }
};

struct ModeFlags {
  bool disk_local = false;
  bool broadcast = false;

  void attach(CLI::App* cmd) {
    auto* a = cmd->add_flag("--disk-local", disk_local,
                            "Keep chunks on the coordinator (per-node dedup scope)");
    auto* b = cmd->add_flag("--broadcast-lookup", broadcast,
                            "Send every fingerprint lookup to all nodes");
    a->excludes(b);
  }
  DedupMode mode() const {
    if (disk_local) return DedupMode::kDiskLocal;
    if (broadcast) return DedupMode::kBroadcastLookup;
    return DedupMode::kClusterWide;
  }
};

void print_report(std::ostream& out, const SavingsReport& r, const Counters& counters,
                  bool as_json) {
  if (as_json) {
    out << format_json_lines(r);
    json j;
    j["kind"] = "messages";
    j["total"] = counters.total();
    j["lookups"] = counters.of("LOOKUP");
    j["dropped"] = counters.dropped;
    j["sent"] = counters.sent;
    out << j.dump() << "\n";
    return;
  }
  out << format_human(r);
  out << fmt::format("messages {}  lookups {}  dropped {}\n", counters.total(),
                     counters.of("LOOKUP"), counters.dropped);
  for (const auto& [kind, n] : counters.sent) {
    if (n > 0) out << fmt::format("  {:<14} {}\n", kind, n);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulated shared-nothing storage cluster with cluster-wide deduplication",
               "cwdedup"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--root", g.root, "Cluster directory")->envname("CWDEDUP_ROOT");
  app.add_flag("--json", g.json, "Machine-readable output");
  g.seed_opt = app.add_option("--seed", g.seed, "Scheduler seed (default 1)");

  // init
  auto* init = app.add_subcommand("init", "Create a cluster");
  std::uint32_t init_nodes = 4;
  std::string init_chunk = "512KiB";
  Tick init_gc = 20;
  Tick init_period = 10;
  ModeFlags init_mode;
  init->add_option("--nodes", init_nodes, "Node count")->default_val(4)->check(
      CLI::Range(1u, 1024u));
  init->add_option("--chunk-size", init_chunk, "Chunk size, e.g. 512KiB")
      ->default_val("512KiB");
  init->add_option("--gc-threshold", init_gc, "Ticks before collected garbage is reclaimed")
      ->default_val(20);
  init->add_option("--consistency-period", init_period,
                   "Ticks between consistency manager passes")
      ->default_val(10);
  init_mode.attach(init);

  // object commands
  auto* put = app.add_subcommand("put", "Store an object");
  std::string put_name, put_file;
  put->add_option("name", put_name, "Object name")->required();
  put->add_option("file", put_file, "Input file, '-' for stdin")->required();

  auto* get = app.add_subcommand("get", "Read an object");
  std::string get_name, get_out;
  get->add_option("name", get_name, "Object name")->required();
  get->add_option("-o,--output", get_out, "Write to this file instead of stdout");

  auto* del = app.add_subcommand("del", "Delete an object");
  std::string del_name;
  del->add_option("name", del_name, "Object name")->required();

  // topology
  auto* add_node = app.add_subcommand("add-node", "Add a node and rebalance");
  double add_weight = 1.0;
  add_node->add_option("--weight", add_weight, "Placement weight")->default_val(1.0);

  auto* remove_node = app.add_subcommand("remove-node", "Drain and remove a node");
  std::uint32_t remove_id = 0;
  remove_node->add_option("id", remove_id, "Node id")->required();

  auto* rebalance = app.add_subcommand("rebalance", "Finish an interrupted rebalance");
  auto* topology = app.add_subcommand("topology", "Topology inspection");
  topology->require_subcommand(1);
  auto* topology_show = topology->add_subcommand("show", "Print the topology manifest");

  // maintenance
  auto* gc = app.add_subcommand("gc", "Run one garbage collection cycle");
  auto* audit = app.add_subcommand("audit", "Check cluster-wide invariants");
  auto* stats = app.add_subcommand("stats", "Space savings and message counters");

  auto* bench = app.add_subcommand("bench", "Write a synthetic workload");
  std::string bench_spec_file, bench_size, bench_object_size;
  std::uint32_t bench_dedup = 50;
  std::uint64_t bench_content_seed = 1;
  bench->add_option("spec", bench_spec_file, "Workload config file (key = value lines)");
  auto* bench_size_opt = bench->add_option("--size", bench_size, "Total bytes, e.g. 1GiB");
  auto* bench_obj_opt =
      bench->add_option("--object-size", bench_object_size, "Object size, e.g. 4MiB");
  auto* bench_dedup_opt =
      bench->add_option("--dedup", bench_dedup, "Duplicate chunk percentage")
          ->check(CLI::Range(0u, 100u));
  auto* bench_seed_opt =
      bench->add_option("--content-seed", bench_content_seed, "Workload content seed");

  auto* fuzz = app.add_subcommand("fuzz-crashes", "Randomized crash-injection campaign");
  std::size_t fuzz_per_label = 200;
  std::uint32_t fuzz_nodes = 4;
  std::string fuzz_chunk = "4KiB";
  std::vector<std::string> fuzz_labels;
  fuzz->add_option("n", fuzz_per_label, "Crashes per label")->required()->check(
      CLI::PositiveNumber);
  fuzz->add_option("--nodes", fuzz_nodes, "Initial node count")->default_val(4);
  fuzz->add_option("--chunk-size", fuzz_chunk, "Chunk size")->default_val("4KiB");
  fuzz->add_option("--label", fuzz_labels, "Restrict to these crash labels");

  auto* script = app.add_subcommand("run-script", "Run a scenario script on a fresh cluster");
  std::string script_file, script_trace;
  std::uint32_t script_nodes = 4;
  std::string script_chunk = "4KiB";
  ModeFlags script_mode;
  script->add_option("file", script_file, "Script file")->required();
  script->add_option("--trace", script_trace, "Write the JSON-lines trace here ('-' = stdout)");
  script->add_option("--nodes", script_nodes, "Node count")->default_val(4);
  script->add_option("--chunk-size", script_chunk, "Chunk size")->default_val("4KiB");
  script_mode.attach(script);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << fmt::format("error: code=invalid-flags msg=\"{}\"\n", quote(e.what()));
    return kExitInvalidFlags;
  }

  auto need_root = [&]() -> fs::path {
    if (g.root.empty()) {
      throw CliFailure{kExitInvalidFlags, "invalid-flags",
                       "no cluster root; pass --root or set CWDEDUP_ROOT"};
    }
    return g.root;
  };

  try {
    if (*init) {
      const fs::path root = need_root();
      if (fs::exists(root / "cluster.json")) {
        throw Error(Errc::kInvalidState,
                    fmt::format("{} already holds a cluster", root.string()));
      }
      SimConfig config;
      config.seed = g.seed;
      config.node_count = init_nodes;
      config.chunk_size = size_flag(init_chunk, "--chunk-size");
      if (config.chunk_size == 0) {
        throw CliFailure{kExitInvalidFlags, "invalid-flags", "--chunk-size must be positive"};
      }
      config.gc_threshold = init_gc;
      config.consistency_period = init_period;
      config.mode = init_mode.mode();
      fs::create_directories(root);
      {
        Cluster cluster(config, root / "nodes");
        json meta;
        meta["config"] = config_to_json(config);
        meta["state"] = state_to_json(cluster.state());
        write_file_atomic(root / "cluster.json", meta.dump(2) + "\n");
      }
      save_counters(root / "stats.json", Counters{});
      if (g.json) {
        json j = config_to_json(config);
        j["root"] = root.string();
        out << j.dump() << "\n";
      } else {
        out << fmt::format("initialized {}: {} nodes, chunk size {} bytes, mode {}\n",
                           root.string(), init_nodes, config.chunk_size,
                           mode_name(config.mode));
      }
      return kExitOk;
    }

    if (*fuzz) {
      FuzzOptions opts;
      opts.seed = g.seed;
      opts.per_label = fuzz_per_label;
      opts.nodes = fuzz_nodes;
      opts.chunk_size = size_flag(fuzz_chunk, "--chunk-size");
      if (!fuzz_labels.empty()) {
        opts.labels.clear();
        for (const auto& l : fuzz_labels) opts.labels.push_back(parse_crash_label(l));
      }
      ScratchDir scratch;
      opts.scratch = scratch.path;
      const FuzzReport report = fuzz_crashes(opts, [&](const LabelResult& l) {
        if (g.json) {
          json j;
          j["label"] = std::string(crash_label_name(l.label));
          j["triggered"] = l.triggered;
          j["attempts"] = l.attempts;
          j["violations"] = l.violations;
          j["first_violation"] = l.first_violation;
          out << j.dump() << "\n";
        } else {
          out << fmt::format("{:<36} triggered {:>5}  attempts {:>5}  violations {}\n",
                             crash_label_name(l.label), l.triggered, l.attempts,
                             l.violations);
        }
        out.flush();
      });
      for (const auto& l : report.labels) {
        if (l.violations > 0) {
          throw CliFailure{kExitInvariant, "invariant-violated",
                           fmt::format("{}: {}", crash_label_name(l.label), l.first_violation)};
        }
      }
      for (const auto& l : report.labels) {
        if (l.triggered < fuzz_per_label) {
          throw CliFailure{kExitGeneric, "insufficient-coverage",
                           fmt::format("{} reached {} of {} crashes", crash_label_name(l.label),
                                       l.triggered, fuzz_per_label)};
        }
      }
      if (!g.json) out << "all crash labels recovered with a clean audit\n";
      return kExitOk;
    }

    if (*script) {
      SimConfig config;
      config.seed = g.seed;
      config.node_count = script_nodes;
      config.chunk_size = size_flag(script_chunk, "--chunk-size");
      config.mode = script_mode.mode();
      ScratchDir scratch;
      const SimResult r = sim_run(config, read_file(script_file), scratch.path / "cluster");
      if (!script_trace.empty()) {
        if (script_trace == "-") {
          for (const auto& line : r.trace) out << line << "\n";
        } else {
          std::string text;
          for (const auto& line : r.trace) text += line + "\n";
          write_file_atomic(script_trace, text);
        }
      }
      if (g.json) {
        json j;
        j["kind"] = "summary";
        j["events"] = r.trace.size();
        j["audited"] = r.audited;
        j["clean"] = r.audited && r.final_audit.clean();
        j["audit"] = describe(r.final_audit);
        out << j.dump() << "\n";
      } else {
        out << fmt::format("{} trace events; final audit: {}\n", r.trace.size(),
                           r.audited ? describe(r.final_audit) : "skipped (cluster not settled)");
      }
      if (r.audited && !r.final_audit.clean()) {
        throw CliFailure{kExitInvariant, "invariant-violated", describe(r.final_audit)};
      }
      return kExitOk;
    }

    Session session(need_root(), g.seed_override());
    Cluster& cluster = session.cluster();
    // Every command below runs against the reopened cluster, which is saved
    // even when the command itself fails.
    try {
      if (*put) {
        Bytes data;
        if (put_file == "-") {
          data.assign(std::istreambuf_iterator<char>(std::cin), {});
        } else {
          const std::string text = read_file(put_file);
          data.assign(text.begin(), text.end());
        }
        const auto size = data.size();
        const auto r = cluster.put(put_name, std::move(data));
        if (g.json) {
          json j;
          j["name"] = put_name;
          j["object_fp"] = r.object_fp.hex();
          j["bytes"] = size;
          j["chunks"] = r.chunks_total;
          j["deduped"] = r.chunks_deduped;
          out << j.dump() << "\n";
        } else {
          out << fmt::format("put {}: {} bytes, {} chunks, {} deduped\n", put_name, size,
                             r.chunks_total, r.chunks_deduped);
        }
      } else if (*get) {
        const Bytes data = cluster.get(get_name);
        if (!get_out.empty()) {
          write_file_atomic(get_out,
                            std::string_view(reinterpret_cast<const char*>(data.data()),
                                             data.size()));
        }
        if (g.json) {
          json j;
          j["name"] = get_name;
          j["bytes"] = data.size();
          j["sha1"] = fingerprint_chunk(data).hex();
          out << j.dump() << "\n";
        } else if (get_out.empty()) {
          out.write(reinterpret_cast<const char*>(data.data()),
                    static_cast<std::streamsize>(data.size()));
        }
      } else if (*del) {
        cluster.del(del_name);
        if (g.json) {
          out << json{{"deleted", del_name}}.dump() << "\n";
        } else {
          out << fmt::format("deleted {}\n", del_name);
        }
      } else if (*add_node) {
        const auto before = cluster.chunks_relocated();
        const NodeId id = cluster.add_node(add_weight);
        const auto moved = cluster.chunks_relocated() - before;
        if (g.json) {
          out << json{{"added", id.value},
                      {"epoch", cluster.topology().epoch()},
                      {"relocated", moved},
                      {"pending", cluster.rebalance_pending()}}
                     .dump()
              << "\n";
        } else {
          out << fmt::format("added node {} (epoch {}), relocated {} chunks\n", id.value,
                             cluster.topology().epoch(), moved);
        }
      } else if (*remove_node) {
        const auto before = cluster.chunks_relocated();
        cluster.remove_node(NodeId{remove_id});
        const auto moved = cluster.chunks_relocated() - before;
        if (g.json) {
          out << json{{"removed", remove_id},
                      {"epoch", cluster.topology().epoch()},
                      {"relocated", moved},
                      {"pending", cluster.rebalance_pending()}}
                     .dump()
              << "\n";
        } else {
          out << fmt::format("removed node {} (epoch {}), relocated {} chunks\n", remove_id,
                             cluster.topology().epoch(), moved);
        }
      } else if (*rebalance) {
        const bool pending = cluster.rebalance_pending();
        cluster.rebalance();
        if (g.json) {
          out << json{{"was_pending", pending}, {"pending", cluster.rebalance_pending()}}.dump()
              << "\n";
        } else {
          out << (pending ? "rebalance complete\n" : "no rebalance pending\n");
        }
      } else if (*topology_show) {
        if (g.json) {
          json j;
          j["epoch"] = cluster.topology().epoch();
          j["nodes"] = json::array();
          for (const auto& m : cluster.topology().members()) {
            j["nodes"].push_back(json{{"id", m.id.value}, {"weight", m.weight}});
          }
          out << j.dump() << "\n";
        } else {
          out << cluster.topology().manifest();
        }
      } else if (*gc) {
        const auto reclaimed = cluster.gc_cycle();
        if (g.json) {
          out << json{{"reclaimed", reclaimed}}.dump() << "\n";
        } else {
          out << fmt::format("reclaimed {} chunks\n", reclaimed);
        }
      } else if (*audit) {
        cluster.drain();
        const AuditReport r = cluster.audit();
        if (g.json) {
          out << json{{"refcount_mismatches", r.refcount_mismatches},
                      {"flag_violations", r.flag_violations},
                      {"orphan_chunks", r.orphan_chunks},
                      {"dangling_refs", r.dangling_refs},
                      {"unreadable_objects", r.unreadable_objects},
                      {"clean", r.clean()}}
                     .dump()
              << "\n";
        } else {
          out << describe(r) << "\n";
        }
        if (!r.clean()) {
          throw CliFailure{kExitInvariant, "invariant-violated", describe(r)};
        }
      } else if (*stats) {
        cluster.drain();
        const SavingsReport r = savings_report(cluster);
        Counters counters = load_counters(session.stats_path());
        counters.add(cluster.counters());
        print_report(out, r, counters, g.json);
      } else if (*bench) {
        WorkloadSpec spec;
        if (!bench_spec_file.empty()) spec = parse_workload_spec(read_file(bench_spec_file));
        spec.chunk_size = cluster.config().chunk_size;
        if (bench_size_opt->count()) spec.total_bytes = size_flag(bench_size, "--size");
        if (bench_obj_opt->count()) spec.object_size = size_flag(bench_object_size, "--object-size");
        if (bench_dedup_opt->count()) spec.dedup_percent = bench_dedup;
        if (bench_seed_opt->count()) spec.seed = bench_content_seed;
        validate(spec);
        const std::string prefix = fmt::format("bench{}-", cluster.state().epoch_runs);
        DedupOracle oracle(spec.chunk_size);
        std::size_t objects = 0;
        generate(spec, [&](const std::string& name, Bytes data) {
          oracle.add(data);
          cluster.put(prefix + name, std::move(data));
          ++objects;
        });
        cluster.drain();
        const SavingsReport r = savings_report(cluster, oracle.unique_bytes());
        Counters counters = load_counters(session.stats_path());
        counters.add(cluster.counters());
        if (!g.json) {
          out << fmt::format("wrote {} objects, {} bytes, {}% duplicate chunks\n", objects,
                             spec.total_bytes, spec.dedup_percent);
        }
        print_report(out, r, counters, g.json);
      }
    } catch (...) {
      try {
        session.save();
      } catch (...) {
      }
      throw;
    }
    session.save();
    return kExitOk;
  } catch (const CliFailure& f) {
    err << fmt::format("error: code={} msg=\"{}\"\n", f.code, quote(f.message));
    return f.exit_code;
  } catch (const Error& e) {
    err << fmt::format("error: code={} msg=\"{}\"\n", errc_name(e.code()), quote(e.what()));
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    err << fmt::format("error: code=corrupt-metadata msg=\"{}\"\n", quote(e.what()));
    return kExitGeneric;
  } catch (const fs::filesystem_error& e) {
    err << fmt::format("error: code=io msg=\"{}\"\n", quote(e.what()));
    return kExitWriteFailure;
  } catch (const std::exception& e) {
    err << fmt::format("error: code=internal msg=\"{}\"\n", quote(e.what()));
    return kExitGeneric;
  }
}

}  // namespace cwdedup::cli
