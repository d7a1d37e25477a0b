#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cwdedup/cluster.h"
#include "cwdedup/workload.h"

namespace cwdedup {

// Seed for script object contents. Fixed, so content (and with it every
// dedup statistic) does not depend on the scheduler seed.
inline constexpr std::uint64_t kScriptContentSeed = 0x5eed;

struct ScriptCommand {
  enum class Op { kPut, kGet, kDel, kCrash, kRecover, kAddNode, kRemoveNode, kGc,
                  kAudit, kStats };
  Op op = Op::kStats;
  int line = 0;
  std::string name;
  std::uint64_t size = 0;
  std::uint32_t dedup_percent = 0;
  NodeId node;
  CrashLabel label = CrashLabel::kBeforeChunkStore;
  std::uint64_t trigger = 1;
  double weight = 1.0;
};

// One command per line; blank lines and '#' comments are skipped.
// Throws kScript for malformed lines, kInvalidCrashPoint for unknown labels.
std::vector<ScriptCommand> parse_script(std::string_view text);

// Executes commands one at a time, each run to idle. Operation failures are
// recorded as "op-error" trace events; references to unknown nodes throw
// kScript.
void run_script(Cluster& cluster, const std::vector<ScriptCommand>& script,
                ContentGenerator& content);

struct SimResult {
  std::vector<std::string> trace;  // JSON lines
  AuditReport final_audit;
  bool audited = false;
};

// Runs `script` on a fresh cluster under `root` (created, and removed
// afterwards) and returns the trace.
SimResult sim_run(const SimConfig& config, std::string_view script,
                  const std::filesystem::path& root);

}  // namespace cwdedup
