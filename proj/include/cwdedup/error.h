#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cwdedup {

enum class Errc {
  kInvalidArgument,
  kNoNodes,
  kTopologyChange,
  kStaleTopology,
  kShardIo,
  kDuplicateCreate,
  kMissingEntry,
  kInvalidFlag,
  kMissingChunk,
  kCorruptChunk,
  kStaleEpoch,
  kObjectWriteFailed,
  kObjectNotFound,
  kObjectCorrupt,
  kObjectExists,
  kNodeUnavailable,
  kInvalidCrashPoint,
  kInvalidState,
  kNotQuiesced,
  kRebalancePending,
  kScript,
  kSpec,
  kUninitialized,
};

// Stable lowercase-dashed name, used in CLI error lines and traces.
std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cwdedup
