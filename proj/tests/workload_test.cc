#include "cwdedup/workload.h"

#include <gtest/gtest.h>

#include <json.hpp>
#include <set>
#include <sstream>

#include "cwdedup/error.h"
#include "test_util.h"

namespace cwdedup {
namespace {

using testing::TempDir;

void expect_spec_error(const std::function<void()>& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected spec error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kSpec) << e.what();
  }
}

// Counts distinct chunk fingerprints across `n_chunks` full chunks.
std::size_t distinct_chunks(std::uint32_t dedup, std::size_t n_chunks, std::uint64_t seed) {
  constexpr std::size_t kChunk = 1024;
  ContentGenerator gen(seed, kChunk);
  std::set<Fingerprint> fps;
  for (std::size_t done = 0; done < n_chunks; done += 16) {
    const Bytes obj = gen.next_object(16 * kChunk, dedup);
    for (const auto& c : split_object(obj, kChunk)) fps.insert(fingerprint_chunk(c));
  }
  EXPECT_EQ(fps, gen.unique_fingerprints());
  return fps.size();
}

TEST(ParseSizeTest, Units) {
  EXPECT_EQ(parse_size("4096"), 4096u);
  EXPECT_EQ(parse_size("12b"), 12u);
  EXPECT_EQ(parse_size("2k"), 2048u);
  EXPECT_EQ(parse_size("512KiB"), 512u * 1024);
  EXPECT_EQ(parse_size("4 MiB"), 4u << 20);
  EXPECT_EQ(parse_size("1GiB"), 1ull << 30);
  EXPECT_EQ(parse_size("3mb"), 3u << 20);
  expect_spec_error([] { parse_size(""); });
  expect_spec_error([] { parse_size("KiB"); });
  expect_spec_error([] { parse_size("5 parsecs"); });
  expect_spec_error([] { parse_size("99999999999999999999"); });
}

TEST(WorkloadSpecTest, ParsesConfig) {
  const auto spec = parse_workload_spec(
      "# bench config\n"
      "size = 64MiB\n"
      "object_size = 1MiB\n"
      "chunk_size = 64KiB   # small chunks\n"
      "dedup = 75%\n"
      "seed = 9\n");
  EXPECT_EQ(spec.total_bytes, 64u << 20);
  EXPECT_EQ(spec.object_size, 1u << 20);
  EXPECT_EQ(spec.chunk_size, 64u << 10);
  EXPECT_EQ(spec.dedup_percent, 75u);
  EXPECT_EQ(spec.seed, 9u);
}

TEST(WorkloadSpecTest, RejectsBadFields) {
  expect_spec_error([] { parse_workload_spec("dedup = 101\n"); });
  expect_spec_error([] { parse_workload_spec("chunk_size = 0\n"); });
  expect_spec_error([] { parse_workload_spec("colour = blue\n"); });
  expect_spec_error([] { parse_workload_spec("seed\n"); });
  WorkloadSpec spec;
  spec.object_size = 0;
  expect_spec_error([&] { validate(spec); });
}

TEST(ObjectNameTest, ZeroPadded) { EXPECT_EQ(object_name(42), "obj-000042"); }

TEST(ContentGeneratorTest, ZeroDedupIsAllDistinct) {
  EXPECT_EQ(distinct_chunks(0, 2048, 1), 2048u);
}

TEST(ContentGeneratorTest, FullDedupHasOneNovelChunk) {
  EXPECT_EQ(distinct_chunks(100, 2048, 2), 1u);
}

TEST(ContentGeneratorTest, HalfDedupOverFourThousandChunks) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto n = distinct_chunks(50, 4096, seed);
    EXPECT_GE(n, 2048u - 41);
    EXPECT_LE(n, 2048u + 41);
  }
}

TEST(ContentGeneratorTest, RealizedFractionWithinOnePercent) {
  for (std::uint32_t d : {10u, 25u, 75u, 90u}) {
    const std::size_t n = 2000;
    const auto distinct = distinct_chunks(d, n, d);
    const double dup = 1.0 - static_cast<double>(distinct) / n;
    EXPECT_NEAR(dup, d / 100.0, 0.01) << d;
  }
}

TEST(ContentGeneratorTest, DeterministicFromSeed) {
  ContentGenerator a(7, 4096), b(7, 4096), c(8, 4096);
  for (int i = 0; i < 5; ++i) {
    const Bytes x = a.next_object(40000, 60);
    EXPECT_EQ(x, b.next_object(40000, 60));
    EXPECT_NE(x, c.next_object(40000, 60));
  }
}

TEST(ContentGeneratorTest, TailsOnlyDuplicateSameLengthTails) {
  ContentGenerator gen(3, 4096);
  std::set<Fingerprint> tails;
  for (int i = 0; i < 50; ++i) {
    const Bytes obj = gen.next_object(4096 + 100 + (i % 2), 100);
    const auto chunks = split_object(obj, 4096);
    tails.insert(fingerprint_chunk(chunks.back()));
  }
  // One novel tail per distinct length, every other tail a copy.
  EXPECT_EQ(tails.size(), 2u);
}

TEST(DedupOracleTest, EmptyDataset) {
  DedupOracle oracle(4096);
  EXPECT_EQ(oracle.unique_bytes(), 0u);
  EXPECT_EQ(oracle.logical_bytes(), 0u);
}

TEST(DedupOracleTest, SameObjectTwiceCountsOnce) {
  DedupOracle oracle(4096);
  const Bytes obj = testing::random_bytes(10000, 4);
  oracle.add(obj);
  oracle.add(obj);
  EXPECT_EQ(oracle.unique_bytes(), 10000u);
  EXPECT_EQ(oracle.logical_bytes(), 20000u);
  EXPECT_EQ(oracle.unique_chunks(), 3u);
  EXPECT_EQ(oracle.chunks_seen(), 6u);
}

TEST(DedupOracleTest, MatchesGeneratorBookkeeping) {
  for (std::uint32_t d : {0u, 50u, 100u}) {
    WorkloadSpec spec;
    spec.total_bytes = 3 << 20;
    spec.object_size = 100000;
    spec.chunk_size = 8192;
    spec.dedup_percent = d;
    DedupOracle oracle(spec.chunk_size);
    std::size_t objects = 0;
    const auto gen = generate(spec, [&](const std::string&, Bytes data) {
      ++objects;
      oracle.add(data);
    });
    EXPECT_EQ(objects, (spec.total_bytes + spec.object_size - 1) / spec.object_size);
    EXPECT_EQ(oracle.logical_bytes(), spec.total_bytes);
    EXPECT_EQ(oracle.unique_bytes(), gen.unique_bytes()) << d;
    std::set<std::string> gen_hex;
    for (const auto& fp : gen.unique_fingerprints()) gen_hex.insert(fp.hex());
    EXPECT_EQ(oracle.unique_hex(), gen_hex) << d;
  }
}

SimConfig bench_config(std::uint32_t nodes, DedupMode mode) {
  SimConfig c;
  c.node_count = nodes;
  c.chunk_size = 4096;
  c.mode = mode;
  return c;
}

SavingsReport run_bench(std::uint32_t nodes, DedupMode mode, std::uint32_t dedup,
                        const std::filesystem::path& root) {
  WorkloadSpec spec;
  spec.total_bytes = 1 << 20;
  spec.object_size = 64 << 10;
  spec.chunk_size = 4096;
  spec.dedup_percent = dedup;
  Cluster cluster(bench_config(nodes, mode), root);
  DedupOracle oracle(spec.chunk_size);
  generate(spec, [&](const std::string& name, Bytes data) {
    oracle.add(data);
    cluster.put(name, std::move(data));
  });
  cluster.drain();
  return savings_report(cluster, oracle.unique_bytes());
}

TEST(SavingsReportTest, ClusterWideMatchesOracle) {
  TempDir dir;
  for (std::uint32_t n : {1u, 3u}) {
    const auto r = run_bench(n, DedupMode::kClusterWide, 60, dir / ("n" + std::to_string(n)));
    EXPECT_EQ(r.nodes, n);
    EXPECT_EQ(r.logical_bytes, 1u << 20);
    ASSERT_TRUE(r.oracle_bytes);
    EXPECT_EQ(r.physical_bytes, *r.oracle_bytes);
    EXPECT_NEAR(r.savings_percent, 60.0, 1.0);
    std::uint64_t sum = 0;
    for (const auto& u : r.per_node) sum += u.physical_bytes;
    EXPECT_EQ(sum, r.physical_bytes);
  }
}

TEST(SavingsReportTest, NoDedupSavesNothing) {
  TempDir dir;
  const auto r = run_bench(2, DedupMode::kClusterWide, 0, dir.path());
  EXPECT_NEAR(r.savings_percent, 0.0, 0.01);
}

TEST(SavingsReportTest, Formats) {
  TempDir dir;
  const auto r = run_bench(2, DedupMode::kDiskLocal, 50, dir.path());
  const std::string human = format_human(r);
  EXPECT_NE(human.find("disk-local"), std::string::npos);
  std::istringstream lines(format_json_lines(r));
  std::string line;
  std::vector<nlohmann::json> docs;
  while (std::getline(lines, line)) docs.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0]["kind"], "total");
  EXPECT_EQ(docs[0]["physical_bytes"], r.physical_bytes);
  EXPECT_EQ(docs[1]["kind"], "node");
  EXPECT_EQ(docs[2]["kind"], "node");
}

TEST(SavingsReportTest, RequiresQuiescedCluster) {
  TempDir dir;
  Cluster cluster(bench_config(2, DedupMode::kClusterWide), dir.path());
  cluster.put("a", testing::random_bytes(10000, 1));
  cluster.crash(cluster.node_ids()[0]);
  try {
    savings_report(cluster);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNotQuiesced);
  }
}

}  // namespace
}  // namespace cwdedup
