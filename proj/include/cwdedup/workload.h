#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwdedup/chunking.h"
#include "cwdedup/cluster.h"

namespace cwdedup {

struct WorkloadSpec {
  std::uint64_t total_bytes = 256ull << 20;
  std::uint64_t object_size = 4ull << 20;
  std::size_t chunk_size = kDefaultChunkSize;
  std::uint32_t dedup_percent = 50;  // share of chunks that repeat earlier content
  std::uint64_t seed = 1;
};

// Throws kSpec for out-of-range fields.
void validate(const WorkloadSpec& spec);

// "4096", "512KiB", "4 MiB", "1GiB", "2k". Throws kSpec.
std::uint64_t parse_size(std::string_view text);

// key = value lines; '#' starts a comment. Keys: total_bytes (or size),
// object_size, chunk_size, dedup_percent (or dedup), seed.
WorkloadSpec parse_workload_spec(std::string_view text);

std::string object_name(std::size_t index);

// Produces object contents with a controlled share of duplicate chunks.
// Positions are planned in blocks of 100 chunks, each holding exactly
// dedup_percent duplicates in shuffled order. A duplicate copies a random
// earlier novel chunk; novel chunks carry a unique id in their first bytes.
// Partial tails only duplicate earlier tails of the same length.
class ContentGenerator {
 public:
  ContentGenerator(std::uint64_t seed, std::size_t chunk_size);

  Bytes next_object(std::uint64_t size, std::uint32_t dedup_percent);

  std::size_t chunk_size() const { return chunk_size_; }
  std::uint64_t chunks_emitted() const { return chunks_emitted_; }
  const std::set<Fingerprint>& unique_fingerprints() const { return unique_; }
  std::uint64_t unique_bytes() const { return unique_bytes_; }

 private:
  void plan_block(std::uint32_t dedup_percent);
  void fill(std::uint64_t domain, std::uint64_t index, std::uint8_t* out,
            std::size_t length) const;

  std::uint64_t seed_;
  std::size_t chunk_size_;
  std::uint64_t rng_state_;
  std::vector<bool> block_;
  std::size_t block_pos_ = 0;
  std::uint32_t block_percent_ = 0;
  std::uint64_t novel_full_ = 0;
  std::uint64_t novel_tails_ = 0;
  std::map<std::size_t, std::vector<std::uint64_t>> tails_by_length_;
  std::uint64_t chunks_emitted_ = 0;
  std::set<Fingerprint> unique_;
  std::uint64_t unique_bytes_ = 0;

  std::uint64_t next_random();
};

// Streams the objects of a workload, in order, to `sink`. Returns the
// generator so callers can inspect its bookkeeping.
ContentGenerator generate(const WorkloadSpec& spec,
                          const std::function<void(const std::string&, Bytes)>& sink);

// Reference deduplicator: splits with its own loop and hashes with a
// separate SHA-1 implementation, sharing no code with the chunking module.
class DedupOracle {
 public:
  using Digest = std::array<std::uint8_t, 20>;

  explicit DedupOracle(std::size_t chunk_size);

  void add(std::span<const std::uint8_t> object);

  std::uint64_t logical_bytes() const { return logical_bytes_; }
  std::uint64_t unique_bytes() const { return unique_bytes_; }
  std::size_t unique_chunks() const { return unique_.size(); }
  std::size_t chunks_seen() const { return chunks_seen_; }
  std::set<std::string> unique_hex() const;

 private:
  std::size_t chunk_size_;
  std::set<Digest> unique_;
  std::uint64_t logical_bytes_ = 0;
  std::uint64_t unique_bytes_ = 0;
  std::size_t chunks_seen_ = 0;
};

struct NodeUsage {
  NodeId id;
  std::uint64_t physical_bytes = 0;
  std::size_t chunks = 0;
  std::size_t objects = 0;
  std::uint64_t logical_bytes = 0;
};

struct SavingsReport {
  DedupMode mode = DedupMode::kClusterWide;
  std::size_t nodes = 0;
  std::uint64_t physical_bytes = 0;
  std::uint64_t logical_bytes = 0;
  double savings_percent = 0.0;
  std::optional<std::uint64_t> oracle_bytes;
  std::vector<NodeUsage> per_node;
};

// Throws kNotQuiesced unless the cluster is quiet with every node up.
SavingsReport savings_report(const Cluster& cluster,
                             std::optional<std::uint64_t> oracle_bytes = std::nullopt);

std::string format_human(const SavingsReport& report);
// One "total" line followed by one "node" line per node.
std::string format_json_lines(const SavingsReport& report);

}  // namespace cwdedup
