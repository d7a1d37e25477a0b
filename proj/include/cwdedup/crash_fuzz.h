#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cwdedup/crash_point.h"

namespace cwdedup {

struct FuzzOptions {
  std::uint64_t seed = 1;
  // Crashes to trigger for each label.
  std::size_t per_label = 200;
  std::uint32_t nodes = 4;
  std::size_t chunk_size = 4096;
  std::vector<CrashLabel> labels{kAllCrashLabels.begin(), kAllCrashLabels.end()};
  // Scratch space; every iteration works in a subdirectory that is removed
  // afterwards.
  std::filesystem::path scratch;
};

struct LabelResult {
  CrashLabel label = CrashLabel::kBeforeChunkStore;
  std::size_t triggered = 0;
  std::size_t attempts = 0;  // runs, including plans that never hit the label
  std::size_t violations = 0;
  std::string first_violation;
};

struct FuzzReport {
  std::vector<LabelResult> labels;

  std::size_t violations() const;
  bool ok() const;
};

// For each label: build a random plan of concurrent puts and deletes with
// one node addition, dry-run it to count how often each node reaches the
// label, then replay it with a crash armed on a randomly chosen hit. The
// crashed node is recovered after the batch it died in. Once the plan ends
// the cluster is drained and collected, and must then pass the audit,
// return every committed object byte-identical and hold no chunk that no
// committed object references.
FuzzReport fuzz_crashes(const FuzzOptions& options,
                        const std::function<void(const LabelResult&)>& progress = {});

}  // namespace cwdedup
