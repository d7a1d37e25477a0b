#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "cwdedup/placement.h"

namespace cwdedup {

// Persistence-boundary steps of the write, commit and rebalance paths.
enum class CrashLabel {
  kBeforeChunkStore,
  kAfterChunkStoreBeforeCit,
  kAfterCitBeforeAck,
  kBeforeOmapPut,
  kMidOmapPut,
  kBeforeFlagSwitch,
  kMidRebalanceAfterCopy,
};

inline constexpr std::array<CrashLabel, 7> kAllCrashLabels{
    CrashLabel::kBeforeChunkStore,   CrashLabel::kAfterChunkStoreBeforeCit,
    CrashLabel::kAfterCitBeforeAck,  CrashLabel::kBeforeOmapPut,
    CrashLabel::kMidOmapPut,         CrashLabel::kBeforeFlagSwitch,
    CrashLabel::kMidRebalanceAfterCopy};

std::string_view crash_label_name(CrashLabel label);
// Throws kInvalidCrashPoint for an unknown label.
CrashLabel parse_crash_label(std::string_view name);

struct CrashPoint {
  CrashLabel label;
  NodeId target;
  std::uint64_t trigger = 1;  // crash on the nth matching step, counted from arming
};

// Thrown through a node's call stack when it reaches an armed crash point.
// Deliberately not derived from Error: protocol handlers must not catch it.
struct NodeCrashed {
  NodeId node;
  CrashLabel label;
};

}  // namespace cwdedup
