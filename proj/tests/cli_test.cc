#include "cli.h"

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "test_util.h"

namespace cwdedup::cli {
namespace {

using cwdedup::testing::TempDir;

struct Result {
  int code;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  Result run(std::vector<std::string> args) {
    args.insert(args.begin(), {"--root", (dir_ / "cluster").string()});
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
  }

  std::string write_input(const std::string& name, const Bytes& data) {
    const auto path = dir_ / name;
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(data.data()), data.size());
    return path.string();
  }

  TempDir dir_;
};

TEST_F(CliTest, InitThenStatsShowsEmptyCluster) {
  ASSERT_EQ(run({"init", "--nodes", "4", "--chunk-size", "512KiB"}).code, kExitOk);
  const auto r = run({"--json", "stats"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto total = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_EQ(total["nodes"], 4);
  EXPECT_EQ(total["physical_bytes"], 0);
}

TEST_F(CliTest, InitTwiceFails) {
  ASSERT_EQ(run({"init"}).code, kExitOk);
  const auto r = run({"init"});
  EXPECT_EQ(r.code, kExitGeneric);
  EXPECT_EQ(r.err.rfind("error: code=invalid-state msg=\"", 0), 0u) << r.err;
}

TEST_F(CliTest, UninitializedCluster) {
  const auto r = run({"stats"});
  EXPECT_EQ(r.code, kExitUninitialized);
  EXPECT_EQ(r.err.rfind("error: code=uninitialized", 0), 0u) << r.err;
}

TEST_F(CliTest, InvalidFlags) {
  EXPECT_EQ(run({"init", "--disk-local", "--broadcast-lookup"}).code, kExitInvalidFlags);
  EXPECT_EQ(run({"init", "--chunk-size", "huge"}).code, kExitInvalidFlags);
  EXPECT_EQ(run({"frobnicate"}).code, kExitInvalidFlags);
  const auto r = run({"init", "--nodes", "0"});
  EXPECT_EQ(r.code, kExitInvalidFlags);
  EXPECT_EQ(r.err.rfind("error: code=invalid-flags msg=\"", 0), 0u) << r.err;
}

TEST_F(CliTest, PutGetDeleteAcrossInvocations) {
  ASSERT_EQ(run({"init", "--nodes", "3", "--chunk-size", "4KiB"}).code, kExitOk);
  const Bytes data = cwdedup::testing::random_bytes(20000, 1);
  const auto file = write_input("in.bin", data);

  auto r = run({"--json", "put", "a", file});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["deduped"], 0);
  r = run({"--json", "put", "b", file});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["deduped"], 5);

  r = run({"get", "a"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out, std::string(data.begin(), data.end()));

  EXPECT_EQ(run({"del", "a"}).code, kExitOk);
  r = run({"get", "a"});
  EXPECT_EQ(r.code, kExitUnknownObject);
  EXPECT_EQ(r.err.rfind("error: code=object-not-found", 0), 0u) << r.err;
  EXPECT_EQ(run({"get", "b", "-o", (dir_ / "out.bin").string()}).code, kExitOk);
  EXPECT_EQ(run({"audit"}).code, kExitOk);
}

TEST_F(CliTest, TopologyChanges) {
  ASSERT_EQ(run({"init", "--nodes", "2", "--chunk-size", "4KiB"}).code, kExitOk);
  const auto file = write_input("in.bin", cwdedup::testing::random_bytes(100000, 2));
  ASSERT_EQ(run({"put", "x", file}).code, kExitOk);
  ASSERT_EQ(run({"add-node", "--weight", "2"}).code, kExitOk);
  auto r = run({"topology", "show"});
  EXPECT_EQ(r.out, "epoch 1\n0 1\n1 1\n2 2\n");
  ASSERT_EQ(run({"remove-node", "0"}).code, kExitOk);
  r = run({"topology", "show"});
  EXPECT_EQ(r.out, "epoch 2\n1 1\n2 2\n");
  EXPECT_EQ(run({"rebalance"}).out, "no rebalance pending\n");
  EXPECT_EQ(run({"get", "x", "-o", (dir_ / "x.bin").string()}).code, kExitOk);
  EXPECT_EQ(run({"audit"}).code, kExitOk);
}

TEST_F(CliTest, BenchSavingsNearTarget) {
  ASSERT_EQ(run({"init", "--nodes", "4", "--chunk-size", "16KiB"}).code, kExitOk);
  const auto r = run({"--json", "bench", "--size", "16MiB", "--object-size", "1MiB",
                      "--dedup", "50"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto total = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_NEAR(total["savings_percent"].get<double>(), 50.0, 2.0);
  EXPECT_EQ(total["physical_bytes"], total["oracle_bytes"]);
  EXPECT_EQ(run({"gc"}).code, kExitOk);
  EXPECT_EQ(run({"audit"}).code, kExitOk);
}

TEST_F(CliTest, FuzzCrashesSmallCampaign) {
  const auto r = run({"--seed", "5", "--json", "fuzz-crashes", "3", "--label",
                      "before-flag-switch", "--label", "mid-omap-put"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int labels = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["violations"], 0);
    EXPECT_EQ(j["triggered"], 3);
    ++labels;
  }
  EXPECT_EQ(labels, 2);
  EXPECT_EQ(run({"fuzz-crashes", "1", "--label", "nowhere"}).code, kExitInvalidFlags);
}

TEST_F(CliTest, RunScriptIsReproducible) {
  const auto script = dir_ / "s.txt";
  std::ofstream(script) << "put a 40KiB 0\nput b 40KiB 50\ncrash 1 before-omap-put 1\n"
                           "put c 20KiB 90\nrecover 1\ngc\naudit\n";
  const auto a = run({"--seed", "9", "run-script", script.string(), "--trace", "-"});
  const auto b = run({"--seed", "9", "run-script", script.string(), "--trace", "-"});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("\"kind\":\"audit\""), std::string::npos);

  std::ofstream(dir_ / "bad.txt") << "explode\n";
  EXPECT_EQ(run({"run-script", (dir_ / "bad.txt").string()}).code, kExitInvalidFlags);
}

TEST_F(CliTest, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("fuzz-crashes"), std::string::npos);
}

}  // namespace
}  // namespace cwdedup::cli
