#include "cwdedup/crash_point.h"

#include <string>

#include "cwdedup/error.h"

namespace cwdedup {

std::string_view crash_label_name(CrashLabel label) {
  switch (label) {
    case CrashLabel::kBeforeChunkStore: return "before-chunk-store";
    case CrashLabel::kAfterChunkStoreBeforeCit: return "after-chunk-store-before-cit";
    case CrashLabel::kAfterCitBeforeAck: return "after-cit-before-ack";
    case CrashLabel::kBeforeOmapPut: return "before-omap-put";
    case CrashLabel::kMidOmapPut: return "mid-omap-put";
    case CrashLabel::kBeforeFlagSwitch: return "before-flag-switch";
    case CrashLabel::kMidRebalanceAfterCopy: return "mid-rebalance-after-copy";
  }
  return "?";
}

CrashLabel parse_crash_label(std::string_view name) {
  for (auto label : kAllCrashLabels) {
    if (crash_label_name(label) == name) return label;
  }
  throw Error(Errc::kInvalidCrashPoint,
              "unknown crash label '" + std::string(name) + "'");
}

}  // namespace cwdedup
