#include "cwdedup/script.h"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <sstream>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::uint64_t number(const std::string& s, int line) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error(Errc::kScript, fmt::format("line {}: bad number '{}'", line, s));
  }
  return v;
}

NodeId node_arg(const std::string& s, int line) {
  const auto v = number(s, line);
  if (v > UINT32_MAX - 1) {
    throw Error(Errc::kScript, fmt::format("line {}: bad node id '{}'", line, s));
  }
  return NodeId{static_cast<std::uint32_t>(v)};
}

void expect_args(const std::vector<std::string>& w, std::size_t n, int line) {
  if (w.size() != n + 1) {
    throw Error(Errc::kScript, fmt::format("line {}: '{}' takes {} argument(s)", line,
                                           w[0], n));
  }
}

}  // namespace

std::vector<ScriptCommand> parse_script(std::string_view text) {
  std::vector<ScriptCommand> out;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const auto w = split_words(raw);
    if (w.empty()) continue;
    ScriptCommand c;
    c.line = lineno;
    const std::string& verb = w[0];
    if (verb == "put") {
      expect_args(w, 3, lineno);
      c.op = ScriptCommand::Op::kPut;
      c.name = w[1];
      try {
        c.size = parse_size(w[2]);
      } catch (const Error&) {
        throw Error(Errc::kScript, fmt::format("line {}: bad size '{}'", lineno, w[2]));
      }
      std::string pct = w[3];
      if (!pct.empty() && pct.back() == '%') pct.pop_back();
      const auto d = number(pct, lineno);
      if (d > 100) {
        throw Error(Errc::kScript, fmt::format("line {}: dedup {} > 100", lineno, d));
      }
      c.dedup_percent = static_cast<std::uint32_t>(d);
    } else if (verb == "get" || verb == "del") {
      expect_args(w, 1, lineno);
      c.op = verb == "get" ? ScriptCommand::Op::kGet : ScriptCommand::Op::kDel;
      c.name = w[1];
    } else if (verb == "crash") {
      expect_args(w, 3, lineno);
      c.op = ScriptCommand::Op::kCrash;
      c.node = node_arg(w[1], lineno);
      c.label = parse_crash_label(w[2]);
      c.trigger = number(w[3], lineno);
      if (c.trigger == 0) {
        throw Error(Errc::kScript, fmt::format("line {}: trigger counts from 1", lineno));
      }
    } else if (verb == "recover" || verb == "remove-node") {
      expect_args(w, 1, lineno);
      c.op = verb == "recover" ? ScriptCommand::Op::kRecover
                               : ScriptCommand::Op::kRemoveNode;
      c.node = node_arg(w[1], lineno);
    } else if (verb == "add-node") {
      if (w.size() > 2) {
        throw Error(Errc::kScript, fmt::format("line {}: add-node takes a weight", lineno));
      }
      c.op = ScriptCommand::Op::kAddNode;
      if (w.size() == 2) {
        try {
          std::size_t used = 0;
          c.weight = std::stod(w[1], &used);
          if (used != w[1].size()) throw std::invalid_argument(w[1]);
        } catch (const std::exception&) {
          throw Error(Errc::kScript, fmt::format("line {}: bad weight '{}'", lineno, w[1]));
        }
      }
    } else if (verb == "gc" || verb == "audit" || verb == "stats") {
      expect_args(w, 0, lineno);
      c.op = verb == "gc"      ? ScriptCommand::Op::kGc
             : verb == "audit" ? ScriptCommand::Op::kAudit
                               : ScriptCommand::Op::kStats;
    } else {
      throw Error(Errc::kScript, fmt::format("line {}: unknown command '{}'", lineno, verb));
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

class Runner {
 public:
  Runner(Cluster& cluster, ContentGenerator& content)
      : cluster_(cluster), content_(content) {}

  void run(const ScriptCommand& c) {
    try {
      execute(c);
    } catch (const Error& e) {
      if (e.code() == Errc::kScript) throw;
      note(fmt::format("line {}: {}: {}", c.line, errc_name(e.code()), e.what()));
    }
  }

 private:
  void note(std::string detail) { op_event("op-error", std::move(detail)); }

  void op_event(std::string_view kind, std::string detail) {
    cluster_.trace_client(kind, std::move(detail));
  }

  void require_node(NodeId id, int line) {
    const auto ids = cluster_.node_ids();
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      throw Error(Errc::kScript, fmt::format("line {}: unknown node {}", line, id.value));
    }
  }

  std::string reply_text(const std::optional<msg::Reply>& r) {
    if (!r) return "no-reply";
    if (!r->ok()) return fmt::format("error={}", errc_name(*r->error));
    return "ok";
  }

  void execute(const ScriptCommand& c) {
    using Op = ScriptCommand::Op;
    switch (c.op) {
      case Op::kPut: {
        auto data = std::make_shared<const Bytes>(
            content_.next_object(c.size, c.dedup_percent));
        const auto id = cluster_.submit_put(c.name, Slice::whole(data));
        cluster_.run_until_idle();
        const auto r = cluster_.result(id);
        std::string extra;
        if (r && r->ok()) {
          const auto& p = std::get<msg::PutResult>(r->body);
          extra = fmt::format(" chunks={} deduped={}", p.chunks_total, p.chunks_deduped);
        }
        op_event("op", fmt::format("put {} {}{}", c.name, reply_text(r), extra));
        break;
      }
      case Op::kGet: {
        const auto id = cluster_.submit_get(c.name);
        cluster_.run_until_idle();
        const auto r = cluster_.result(id);
        std::string extra;
        if (r && r->ok()) {
          const auto s = std::get<msg::ObjectData>(r->body).data.span();
          extra = fmt::format(" len={} sha1={}", s.size(), fingerprint_chunk(s).hex());
        }
        op_event("op", fmt::format("get {} {}{}", c.name, reply_text(r), extra));
        break;
      }
      case Op::kDel: {
        const auto id = cluster_.submit_del(c.name);
        cluster_.run_until_idle();
        op_event("op", fmt::format("del {} {}", c.name, reply_text(cluster_.result(id))));
        break;
      }
      case Op::kCrash:
        require_node(c.node, c.line);
        cluster_.arm(CrashPoint{c.label, c.node, c.trigger});
        op_event("op", fmt::format("arm {} {} {}", c.node.value, crash_label_name(c.label),
                                   c.trigger));
        break;
      case Op::kRecover:
        require_node(c.node, c.line);
        cluster_.recover(c.node);
        if (cluster_.rebalance_pending() && cluster_.crashed_nodes().empty()) {
          cluster_.rebalance();
        }
        break;
      case Op::kAddNode: {
        const NodeId id = cluster_.add_node(c.weight);
        op_event("op", fmt::format("add-node {}", id.value));
        break;
      }
      case Op::kRemoveNode:
        require_node(c.node, c.line);
        cluster_.remove_node(c.node);
        op_event("op", fmt::format("remove-node {}", c.node.value));
        break;
      case Op::kGc:
        cluster_.gc_cycle();
        break;
      case Op::kAudit: {
        cluster_.drain();
        op_event("audit", describe(cluster_.audit()));
        break;
      }
      case Op::kStats: {
        cluster_.drain();
        const auto& k = cluster_.counters();
        std::string detail = fmt::format("messages={} lookups={}", k.total(), k.lookups());
        if (cluster_.crashed_nodes().empty() && cluster_.quiesced()) {
          const auto r = savings_report(cluster_);
          detail += fmt::format(" logical={} physical={} savings={:.2f}", r.logical_bytes,
                                r.physical_bytes, r.savings_percent);
        }
        op_event("stats", std::move(detail));
        break;
      }
    }
  }

  Cluster& cluster_;
  ContentGenerator& content_;
};

}  // namespace

void run_script(Cluster& cluster, const std::vector<ScriptCommand>& script,
                ContentGenerator& content) {
  Runner runner(cluster, content);
  for (const auto& c : script) runner.run(c);
}

SimResult sim_run(const SimConfig& config, std::string_view script,
                  const std::filesystem::path& root) {
  const auto commands = parse_script(script);
  SimResult result;
  std::filesystem::remove_all(root);
  {
    Cluster cluster(config, root);
    cluster.set_trace_sink(
        [&](const TraceEvent& e) { result.trace.push_back(trace_json(e)); });
    ContentGenerator content(kScriptContentSeed, config.chunk_size);
    run_script(cluster, commands, content);
    if (cluster.crashed_nodes().empty() && cluster.drain() &&
        !cluster.rebalance_pending()) {
      result.final_audit = cluster.audit();
      result.audited = true;
    }
  }
  std::filesystem::remove_all(root);
  return result;
}

}  // namespace cwdedup
