#include "cwdedup/cluster.h"

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "cwdedup/error.h"
#include "cwdedup/script.h"
#include "test_util.h"

namespace cwdedup {
namespace {

using testing::random_bytes;
using testing::TempDir;

SimConfig small_config(std::uint32_t nodes = 4, std::size_t chunk = 4096) {
  SimConfig c;
  c.node_count = nodes;
  c.chunk_size = chunk;
  return c;
}

std::vector<Fingerprint> chunk_fps(const Bytes& data, std::size_t chunk) {
  std::vector<Fingerprint> out;
  for (const auto& c : split_object(data, chunk)) out.push_back(fingerprint_chunk(c));
  return out;
}

// Every CIT row in the cluster, keyed by fingerprint.
std::map<Fingerprint, CitEntry> all_cit(const Cluster& c) {
  std::map<Fingerprint, CitEntry> out;
  for (NodeId id : c.node_ids()) {
    if (!c.alive(id)) continue;
    for (const auto& [fp, e] : c.node(id)->shard().cit()) out[fp] = e;
  }
  return out;
}

std::map<Fingerprint, OmapEntry> all_omap(const Cluster& c) {
  std::map<Fingerprint, OmapEntry> out;
  for (NodeId id : c.node_ids()) {
    if (!c.alive(id)) continue;
    for (const auto& [fp, e] : c.node(id)->shard().omap()) out[fp] = e;
  }
  return out;
}

std::size_t physical_chunks(const Cluster& c) {
  std::size_t n = 0;
  for (NodeId id : c.node_ids()) {
    if (c.alive(id)) n += c.node(id)->chunks().count();
  }
  return n;
}

// A name whose coordinator is not `avoid`.
std::string name_not_on(const Cluster& c, NodeId avoid) {
  for (int i = 0;; ++i) {
    std::string name = "obj-" + std::to_string(i);
    if (place(fingerprint_object_name(name), c.topology()) != avoid) return name;
  }
}

TEST(ClusterTest, FreshPutThenFlagsValidAfterManager) {
  TempDir dir;
  Cluster c(small_config(4, 512 * 1024), dir.path());
  const Bytes data = random_bytes(1 << 20, 1);
  const auto r = c.put("a", data);
  EXPECT_EQ(r.chunks_total, 2u);
  EXPECT_EQ(r.chunks_deduped, 0u);
  ASSERT_TRUE(c.drain());
  for (const auto& fp : chunk_fps(data, 512 * 1024)) {
    const auto e = c.node(place(fp, c.topology()))->shard().cit_lookup(fp);
    ASSERT_TRUE(e);
    EXPECT_EQ(e->refcount, 1u);
    EXPECT_EQ(e->flag, CommitFlag::kValid);
  }
}

TEST(ClusterTest, SameDataUnderSecondNameIsDeduplicated) {
  TempDir dir;
  Cluster c(small_config(4, 512 * 1024), dir.path());
  const Bytes data = random_bytes(1 << 20, 2);
  c.put("a", data);
  const std::size_t before = physical_chunks(c);
  const auto r = c.put("b", data);
  EXPECT_EQ(r.chunks_total, 2u);
  EXPECT_EQ(r.chunks_deduped, 2u);
  EXPECT_EQ(physical_chunks(c), before);
  ASSERT_TRUE(c.drain());
  for (const auto& [fp, e] : all_cit(c)) EXPECT_EQ(e.refcount, 2u);
}

TEST(ClusterTest, DuplicateWriteBeforeFlagSwitchStillDeduplicates) {
  TempDir dir;
  Cluster c(small_config(4, 4096), dir.path());
  const Bytes data = random_bytes(3 * 4096, 3);
  auto id1 = c.submit_put("a", Slice::whole(std::make_shared<const Bytes>(data)));
  c.run_until_idle();
  ASSERT_TRUE(c.result(id1)->ok());
  const auto r = c.put("b", data);
  EXPECT_EQ(r.chunks_deduped, 3u);
  ASSERT_TRUE(c.drain());
  EXPECT_TRUE(c.audit().clean());
}

TEST(ClusterTest, CrashBeforeCitCreateFailsTheObject) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  // Two chunks on different owners.
  Bytes data;
  std::vector<Fingerprint> fps;
  for (std::uint64_t seed = 10;; ++seed) {
    data = random_bytes(2 * 4096, seed);
    fps = chunk_fps(data, 4096);
    if (place(fps[0], c.topology()) != place(fps[1], c.topology())) break;
  }
  const NodeId victim = place(fps[0], c.topology());
  const NodeId survivor = place(fps[1], c.topology());
  const std::string name = name_not_on(c, victim);
  c.arm({CrashLabel::kAfterChunkStoreBeforeCit, victim, 1});

  try {
    c.put(name, data);
    FAIL() << "put succeeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kObjectWriteFailed);
  }
  EXPECT_TRUE(all_omap(c).empty());
  const auto garbage = c.node(survivor)->shard().cit_lookup(fps[1]);
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->flag, CommitFlag::kInvalid);

  c.recover(victim);
  EXPECT_TRUE(c.node(victim)->chunks().contains(fps[0]));
  EXPECT_FALSE(c.node(victim)->shard().cit_lookup(fps[0]));
  ASSERT_TRUE(c.drain());
  const AuditReport before = c.audit();
  EXPECT_EQ(before.orphan_chunks, 2u);
  EXPECT_EQ(before.dangling_refs, 0u);

  EXPECT_EQ(c.gc_cycle(), 2u);
  EXPECT_TRUE(c.audit().clean());
  EXPECT_EQ(physical_chunks(c), 0u);
}

TEST(ClusterTest, GetRoundTripAndUnknownName) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const Bytes data = random_bytes(5 * 4096 + 17, 4);
  c.put("x", data);
  EXPECT_EQ(c.get("x"), data);
  try {
    c.get("nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kObjectNotFound);
  }
}

TEST(ClusterTest, EmptyObjectRoundTrips) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const auto r = c.put("empty", {});
  EXPECT_EQ(r.chunks_total, 0u);
  EXPECT_TRUE(c.get("empty").empty());
  c.del("empty");
  ASSERT_TRUE(c.drain());
  EXPECT_TRUE(c.audit().clean());
}

TEST(ClusterTest, PutOfExistingNameIsRejected) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  c.put("x", random_bytes(4096, 5));
  try {
    c.put("x", random_bytes(4096, 6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kObjectExists);
  }
}

TEST(ClusterTest, DeleteSoleReferencerThenGcReclaims) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const Bytes data = random_bytes(2 * 4096, 7);
  c.put("x", data);
  ASSERT_TRUE(c.drain());
  c.del("x");
  for (const auto& [fp, e] : all_cit(c)) {
    EXPECT_EQ(e.refcount, 0u);
    EXPECT_EQ(e.flag, CommitFlag::kInvalid);
  }
  EXPECT_EQ(c.gc_cycle(), 2u);
  EXPECT_TRUE(all_cit(c).empty());
  EXPECT_EQ(physical_chunks(c), 0u);
}

TEST(ClusterTest, DeleteOneOfTwoSharersKeepsChunks) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const Bytes data = random_bytes(2 * 4096, 8);
  c.put("x", data);
  c.put("y", data);
  c.del("x");
  ASSERT_TRUE(c.drain());
  for (const auto& [fp, e] : all_cit(c)) EXPECT_EQ(e.refcount, 1u);
  c.gc_cycle();
  EXPECT_EQ(physical_chunks(c), 2u);
  EXPECT_EQ(c.get("y"), data);
}

TEST(ClusterTest, DoubleDeleteReportsNotFound) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  c.put("x", random_bytes(4096, 9));
  c.del("x");
  try {
    c.del("x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kObjectNotFound);
  }
}

TEST(ClusterTest, ManagerSwitchesOneFlagPerUniqueChunk) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  c.put("x", random_bytes(3 * 4096, 11));
  ASSERT_TRUE(c.drain());
  std::uint64_t switched = 0;
  for (NodeId id : c.node_ids()) switched += c.node(id)->stats().flags_switched;
  EXPECT_EQ(switched, 3u);
  // Idle run.
  for (NodeId id : c.node_ids()) EXPECT_EQ(c.node(id)->consistency_manager_run(), 0u);
}

TEST(ClusterTest, CrashedTransactionSwitchesNoFlags) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const std::string name = "x";
  const NodeId coord = place(fingerprint_object_name(name), c.topology());
  c.arm({CrashLabel::kBeforeOmapPut, coord, 1});
  EXPECT_THROW(c.put(name, random_bytes(3 * 4096, 12)), Error);
  c.recover(coord);
  ASSERT_TRUE(c.drain());
  std::uint64_t switched = 0;
  for (NodeId id : c.node_ids()) switched += c.node(id)->stats().flags_switched;
  EXPECT_EQ(switched, 0u);
  for (const auto& [fp, e] : all_cit(c)) EXPECT_EQ(e.flag, CommitFlag::kInvalid);
}

TEST(ClusterTest, CrashBeforeFlagSwitchObjectStaysReadableAndDuplicateRepairs) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const Bytes data = random_bytes(4096, 13);
  const Fingerprint fp = fingerprint_chunk(data);
  const NodeId owner = place(fp, c.topology());
  const std::string name = name_not_on(c, owner);
  c.arm({CrashLabel::kBeforeFlagSwitch, owner, 1});
  c.put(name, data);
  c.run_until_idle();
  EXPECT_FALSE(c.alive(owner));
  c.recover(owner);
  EXPECT_EQ(c.node(owner)->shard().cit_lookup(fp)->flag, CommitFlag::kInvalid);
  EXPECT_EQ(c.get(name), data);
  const auto r = c.put(name_not_on(c, owner) + "-dup", data);
  EXPECT_EQ(r.chunks_deduped, 1u);
  const auto e = c.node(owner)->shard().cit_lookup(fp);
  EXPECT_EQ(e->flag, CommitFlag::kValid);
  EXPECT_EQ(e->refcount, 2u);
  ASSERT_TRUE(c.drain());
  EXPECT_TRUE(c.audit().clean());
}

TEST(ClusterTest, RecoverRunningNodeIsInvalidState) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  try {
    c.recover(NodeId{0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidState);
  }
}

TEST(ClusterTest, UnknownCrashLabelIsRejected) {
  try {
    parse_crash_label("after-lunch");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidCrashPoint);
  }
}

TEST(ClusterTest, AuditDuringTrafficIsNotQuiesced) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  c.submit_put("x", Slice::whole(std::make_shared<const Bytes>(random_bytes(4096, 14))));
  try {
    c.audit();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNotQuiesced);
  }
}

TEST(ClusterTest, AuditCleanAfterSuccessfulPuts) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  for (int i = 0; i < 10; ++i) {
    c.put("o" + std::to_string(i), random_bytes(3 * 4096 + i, 100 + i % 3));
  }
  ASSERT_TRUE(c.drain());
  EXPECT_EQ(c.audit(), AuditReport{});
}

TEST(ClusterTest, SingleLookupPerChunk) {
  for (DedupMode mode : {DedupMode::kClusterWide, DedupMode::kBroadcastLookup}) {
    TempDir dir;
    SimConfig cfg = small_config(8);
    cfg.mode = mode;
    Cluster c(cfg, dir.path());
    ContentGenerator gen(3, 4096);
    for (int i = 0; i < 20; ++i) c.put(object_name(i), gen.next_object(10 * 4096, 40));
    const std::uint64_t per = mode == DedupMode::kClusterWide ? 1 : 8;
    EXPECT_EQ(c.counters().lookups(), 200u * per) << mode_name(mode);
  }
}

TEST(ClusterTest, ForegroundNeverWaitsOnManager) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  ContentGenerator gen(4, 4096);
  for (int i = 0; i < 20; ++i) {
    c.submit_put(object_name(i),
                 Slice::whole(std::make_shared<const Bytes>(gen.next_object(6 * 4096, 50))));
  }
  ASSERT_TRUE(c.drain());
  EXPECT_GT(c.counters().of(MsgKind::kSetFlag), 0u);
  EXPECT_EQ(c.counters().waits(TaskClass::kForeground, TaskClass::kManager), 0u);
  EXPECT_GT(c.counters().waits(TaskClass::kManager, TaskClass::kManager), 0u);
}

TEST(ClusterTest, RebalancePreservesCitAndOmap) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  ContentGenerator gen(5, 4096);
  std::map<std::string, Bytes> objects;
  for (int i = 0; i < 40; ++i) {
    objects[object_name(i)] = gen.next_object(50 * 4096, 30);
    c.put(object_name(i), objects[object_name(i)]);
  }
  ASSERT_TRUE(c.drain());
  const auto cit_before = all_cit(c);
  const auto omap_before = all_omap(c);
  c.add_node();
  EXPECT_FALSE(c.rebalance_pending());
  EXPECT_GT(c.chunks_relocated(), 0u);
  EXPECT_EQ(all_cit(c), cit_before);
  EXPECT_EQ(all_omap(c), omap_before);
  for (const auto& [name, data] : objects) EXPECT_EQ(c.get(name), data);
  ASSERT_TRUE(c.drain());
  EXPECT_TRUE(c.audit().clean());
}

TEST(ClusterTest, RebalanceOfEmptyClusterMovesNothing) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  c.add_node();
  EXPECT_EQ(c.chunks_relocated(), 0u);
  EXPECT_EQ(c.topology().size(), 5u);
}

TEST(ClusterTest, CrashMidMoveLeavesOneOwnerAfterRerun) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  ContentGenerator gen(6, 4096);
  for (int i = 0; i < 10; ++i) c.put(object_name(i), gen.next_object(20 * 4096, 0));
  ASSERT_TRUE(c.drain());
  c.arm({CrashLabel::kMidRebalanceAfterCopy, NodeId{0}, 3});
  c.add_node();
  EXPECT_TRUE(c.rebalance_pending());
  c.recover(NodeId{0});
  c.rebalance();
  EXPECT_FALSE(c.rebalance_pending());
  std::map<Fingerprint, int> holders;
  for (NodeId id : c.node_ids()) {
    for (const auto& fp : c.node(id)->chunks().list()) ++holders[fp];
  }
  for (const auto& [fp, n] : holders) EXPECT_EQ(n, 1) << fp.hex();
  ASSERT_TRUE(c.drain());
  EXPECT_TRUE(c.audit().clean());
}

TEST(ClusterTest, RemoveNodeDrainsItsData) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  ContentGenerator gen(7, 4096);
  std::map<std::string, Bytes> objects;
  for (int i = 0; i < 10; ++i) {
    objects[object_name(i)] = gen.next_object(8 * 4096, 20);
    c.put(object_name(i), objects[object_name(i)]);
  }
  c.remove_node(NodeId{2});
  EXPECT_EQ(c.node(NodeId{2}), nullptr);
  EXPECT_FALSE(std::filesystem::exists(dir / "node-2"));
  for (const auto& [name, data] : objects) EXPECT_EQ(c.get(name), data);
  ASSERT_TRUE(c.drain());
  EXPECT_TRUE(c.audit().clean());
}

TEST(ClusterTest, ClientTrafficRefusedWhileRelocationPending) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  ContentGenerator gen(8, 4096);
  for (int i = 0; i < 10; ++i) c.put(object_name(i), gen.next_object(20 * 4096, 0));
  c.arm({CrashLabel::kMidRebalanceAfterCopy, NodeId{1}, 1});
  c.add_node();
  ASSERT_TRUE(c.rebalance_pending());
  try {
    c.get(object_name(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kRebalancePending);
  }
}

TEST(ClusterTest, ReopenFromStateKeepsData) {
  TempDir dir;
  const Bytes data = random_bytes(7 * 4096, 15);
  ClusterState state;
  {
    Cluster c(small_config(), dir.path());
    c.put("x", data);
    ASSERT_TRUE(c.drain());
    state = c.state();
  }
  Cluster again(small_config(), dir.path(), state);
  EXPECT_EQ(again.get("x"), data);
  ASSERT_TRUE(again.drain());
  EXPECT_TRUE(again.audit().clean());
}

TEST(ClusterTest, MessagesToDownNodeFailFast) {
  TempDir dir;
  Cluster c(small_config(), dir.path());
  const std::string name = "x";
  const NodeId coord = place(fingerprint_object_name(name), c.topology());
  c.crash(coord);
  try {
    c.put(name, random_bytes(4096, 16));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNodeUnavailable);
  }
}

TEST(ClusterTest, TraceJsonShape) {
  TraceEvent e{12, "msg", NodeId{3}, "detail \"q\""};
  EXPECT_EQ(trace_json(e),
            R"({"tick":12,"kind":"msg","node":3,"detail":"detail \"q\""})");
  e.node.reset();
  EXPECT_EQ(trace_json(e), R"({"tick":12,"kind":"msg","node":null,"detail":"detail \"q\""})");
}

}  // namespace
}  // namespace cwdedup
