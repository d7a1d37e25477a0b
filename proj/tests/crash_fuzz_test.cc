#include "cwdedup/crash_fuzz.h"

#include <gtest/gtest.h>

#include "cwdedup/cluster.h"
#include "cwdedup/error.h"
#include "cwdedup/workload.h"
#include "test_util.h"

namespace cwdedup {
namespace {

using testing::TempDir;

TEST(CrashFuzzTest, EveryLabelTriggersWithoutViolations) {
  TempDir dir;
  FuzzOptions opt;
  opt.seed = 42;
  opt.per_label = 10;
  opt.scratch = dir.path();
  const FuzzReport report = fuzz_crashes(opt);
  ASSERT_EQ(report.labels.size(), kAllCrashLabels.size());
  for (const auto& l : report.labels) {
    EXPECT_EQ(l.triggered, 10u) << crash_label_name(l.label);
    EXPECT_EQ(l.violations, 0u) << crash_label_name(l.label) << ": " << l.first_violation;
  }
  EXPECT_TRUE(report.ok());
}

TEST(CrashFuzzTest, NeedsScratchDirectory) {
  EXPECT_THROW(fuzz_crashes(FuzzOptions{}), Error);
}

}  // namespace
}  // namespace cwdedup
