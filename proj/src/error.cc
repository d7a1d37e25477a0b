#include "cwdedup/error.h"

namespace cwdedup {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "invalid-argument";
    case Errc::kNoNodes: return "no-nodes";
    case Errc::kTopologyChange: return "topology-change";
    case Errc::kStaleTopology: return "stale-topology";
    case Errc::kShardIo: return "shard-io";
    case Errc::kDuplicateCreate: return "duplicate-create";
    case Errc::kMissingEntry: return "missing-entry";
    case Errc::kInvalidFlag: return "invalid-flag";
    case Errc::kMissingChunk: return "missing-chunk";
    case Errc::kCorruptChunk: return "corrupt-chunk";
    case Errc::kStaleEpoch: return "stale-epoch";
    case Errc::kObjectWriteFailed: return "object-write-failed";
    case Errc::kObjectNotFound: return "object-not-found";
    case Errc::kObjectCorrupt: return "object-corrupt";
    case Errc::kObjectExists: return "object-exists";
    case Errc::kNodeUnavailable: return "node-unavailable";
    case Errc::kInvalidCrashPoint: return "invalid-crash-point";
    case Errc::kInvalidState: return "invalid-state";
    case Errc::kNotQuiesced: return "not-quiesced";
    case Errc::kRebalancePending: return "rebalance-pending";
    case Errc::kScript: return "script";
    case Errc::kSpec: return "spec";
    case Errc::kUninitialized: return "uninitialized";
  }
  return "unknown";
}

}  // namespace cwdedup
