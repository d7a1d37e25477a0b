#include "cwdedup/workload.h"

#include <fmt/format.h>

#include <algorithm>
#include <boost/uuid/detail/sha1.hpp>
#include <cctype>
#include <charconv>
#include <json.hpp>
#include <sstream>

#include "cwdedup/error.h"

namespace cwdedup {

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kFullDomain = 0x46554c4c;  // "FULL"
constexpr std::uint64_t kTailDomain = 0x5441494c;  // "TAIL"

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  text = trim(text);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
    throw Error(Errc::kSpec, fmt::format("bad {} '{}'", what, text));
  }
  return v;
}

}  // namespace

void validate(const WorkloadSpec& spec) {
  if (spec.chunk_size == 0) throw Error(Errc::kSpec, "chunk_size must be positive");
  if (spec.object_size == 0) throw Error(Errc::kSpec, "object_size must be positive");
  if (spec.dedup_percent > 100) {
    throw Error(Errc::kSpec,
                fmt::format("dedup_percent {} outside 0..100", spec.dedup_percent));
  }
}

std::uint64_t parse_size(std::string_view text) {
  text = trim(text);
  std::size_t digits = 0;
  while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits]))) {
    ++digits;
  }
  if (digits == 0) throw Error(Errc::kSpec, fmt::format("bad size '{}'", text));
  const std::uint64_t n = parse_uint(text.substr(0, digits), "size");
  std::string unit(trim(text.substr(digits)));
  std::transform(unit.begin(), unit.end(), unit.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::uint64_t mult = 0;
  if (unit.empty() || unit == "b") mult = 1;
  else if (unit == "k" || unit == "kib" || unit == "kb") mult = 1ull << 10;
  else if (unit == "m" || unit == "mib" || unit == "mb") mult = 1ull << 20;
  else if (unit == "g" || unit == "gib" || unit == "gb") mult = 1ull << 30;
  else throw Error(Errc::kSpec, fmt::format("unknown size unit '{}'", unit));
  if (n > UINT64_MAX / mult) throw Error(Errc::kSpec, "size overflows");
  return n * mult;
}

WorkloadSpec parse_workload_spec(std::string_view text) {
  WorkloadSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = line;
    if (auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kSpec, fmt::format("line {}: expected key = value", lineno));
    }
    const std::string_view key = trim(v.substr(0, eq));
    const std::string_view value = trim(v.substr(eq + 1));
    if (key == "total_bytes" || key == "size") {
      spec.total_bytes = parse_size(value);
    } else if (key == "object_size") {
      spec.object_size = parse_size(value);
    } else if (key == "chunk_size") {
      spec.chunk_size = parse_size(value);
    } else if (key == "dedup_percent" || key == "dedup") {
      std::string_view pct = value;
      if (!pct.empty() && pct.back() == '%') pct.remove_suffix(1);
      const auto p = parse_uint(pct, "dedup_percent");
      if (p > 100) throw Error(Errc::kSpec, fmt::format("dedup_percent {} > 100", p));
      spec.dedup_percent = static_cast<std::uint32_t>(p);
    } else if (key == "seed") {
      spec.seed = parse_uint(value, "seed");
    } else {
      throw Error(Errc::kSpec, fmt::format("line {}: unknown key '{}'", lineno, key));
    }
  }
  validate(spec);
  return spec;
}

std::string object_name(std::size_t index) { return fmt::format("obj-{:06}", index); }

// ---------------------------------------------------------------------------

ContentGenerator::ContentGenerator(std::uint64_t seed, std::size_t chunk_size)
    : seed_(seed), chunk_size_(chunk_size), rng_state_(seed ^ 0x636f6e74656e74ULL) {
  if (chunk_size == 0) throw Error(Errc::kSpec, "chunk_size must be positive");
}

std::uint64_t ContentGenerator::next_random() { return splitmix(rng_state_); }

void ContentGenerator::plan_block(std::uint32_t dedup_percent) {
  block_.assign(100, false);
  for (std::uint32_t i = 0; i < dedup_percent; ++i) block_[i] = true;
  for (std::size_t i = block_.size() - 1; i > 0; --i) {
    const std::size_t j = next_random() % (i + 1);
    const bool tmp = block_[i];
    block_[i] = block_[j];
    block_[j] = tmp;
  }
  block_pos_ = 0;
  block_percent_ = dedup_percent;
}

void ContentGenerator::fill(std::uint64_t domain, std::uint64_t index,
                            std::uint8_t* out, std::size_t length) const {
  std::uint8_t id[16];
  const std::uint64_t a = seed_ ^ (domain << 32);
  for (int i = 0; i < 8; ++i) {
    id[i] = static_cast<std::uint8_t>(a >> (8 * i));
    id[8 + i] = static_cast<std::uint8_t>(index >> (8 * i));
  }
  const std::size_t head = std::min<std::size_t>(16, length);
  std::copy(id, id + head, out);
  std::uint64_t state = seed_ * 0x9e3779b97f4a7c15ULL ^ (domain << 40) ^ index;
  std::size_t pos = head;
  while (pos < length) {
    const std::uint64_t r = splitmix(state);
    const std::size_t n = std::min<std::size_t>(8, length - pos);
    for (std::size_t i = 0; i < n; ++i) out[pos + i] = static_cast<std::uint8_t>(r >> (8 * i));
    pos += n;
  }
}

Bytes ContentGenerator::next_object(std::uint64_t size, std::uint32_t dedup_percent) {
  if (dedup_percent > 100) {
    throw Error(Errc::kSpec, fmt::format("dedup_percent {} outside 0..100", dedup_percent));
  }
  Bytes out(size);
  for (std::uint64_t offset = 0; offset < size; offset += chunk_size_) {
    const std::size_t length =
        static_cast<std::size_t>(std::min<std::uint64_t>(chunk_size_, size - offset));
    if (block_.empty() || block_pos_ == block_.size() || block_percent_ != dedup_percent) {
      plan_block(dedup_percent);
    }
    const bool duplicate = block_[block_pos_++];
    std::uint8_t* dst = out.data() + offset;

    if (length == chunk_size_) {
      if (duplicate && novel_full_ > 0) {
        fill(kFullDomain, next_random() % novel_full_, dst, length);
      } else {
        fill(kFullDomain, novel_full_++, dst, length);
      }
    } else {
      auto& pool = tails_by_length_[length];
      if (duplicate && !pool.empty()) {
        fill(kTailDomain, pool[next_random() % pool.size()], dst, length);
      } else {
        pool.push_back(novel_tails_);
        fill(kTailDomain, novel_tails_++, dst, length);
      }
    }
    ++chunks_emitted_;
    if (unique_.insert(fingerprint_chunk(std::span<const std::uint8_t>(dst, length))).second) {
      unique_bytes_ += length;
    }
  }
  return out;
}

ContentGenerator generate(const WorkloadSpec& spec,
                          const std::function<void(const std::string&, Bytes)>& sink) {
  validate(spec);
  ContentGenerator gen(spec.seed, spec.chunk_size);
  std::size_t index = 0;
  for (std::uint64_t done = 0; done < spec.total_bytes;) {
    const std::uint64_t size = std::min(spec.object_size, spec.total_bytes - done);
    sink(object_name(index++), gen.next_object(size, spec.dedup_percent));
    done += size;
  }
  return gen;
}

// ---------------------------------------------------------------------------

DedupOracle::DedupOracle(std::size_t chunk_size) : chunk_size_(chunk_size) {
  if (chunk_size == 0) throw Error(Errc::kSpec, "chunk_size must be positive");
}

void DedupOracle::add(std::span<const std::uint8_t> object) {
  logical_bytes_ += object.size();
  std::size_t pos = 0;
  while (pos < object.size()) {
    const std::size_t n = std::min(chunk_size_, object.size() - pos);
    boost::uuids::detail::sha1 h;
    h.process_bytes(object.data() + pos, n);
    boost::uuids::detail::sha1::digest_type words;
    h.get_digest(words);
    Digest d;
    for (int w = 0; w < 5; ++w) {
      for (int b = 0; b < 4; ++b) {
        d[w * 4 + b] = static_cast<std::uint8_t>(words[w] >> (24 - 8 * b));
      }
    }
    if (unique_.insert(d).second) unique_bytes_ += n;
    ++chunks_seen_;
    pos += n;
  }
}

std::set<std::string> DedupOracle::unique_hex() const {
  std::set<std::string> out;
  for (const auto& d : unique_) {
    std::string s;
    s.reserve(40);
    for (auto b : d) s += fmt::format("{:02x}", b);
    out.insert(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

SavingsReport savings_report(const Cluster& cluster,
                             std::optional<std::uint64_t> oracle_bytes) {
  if (!cluster.quiesced() || !cluster.crashed_nodes().empty()) {
    throw Error(Errc::kNotQuiesced, "savings report needs a quiet cluster");
  }
  SavingsReport r;
  r.mode = cluster.config().mode;
  r.oracle_bytes = oracle_bytes;
  for (NodeId id : cluster.node_ids()) {
    const Node* n = cluster.node(id);
    NodeUsage u;
    u.id = id;
    u.physical_bytes = n->chunks().bytes_used();
    u.chunks = n->chunks().count();
    u.objects = n->shard().omap().size();
    for (const auto& [fp, e] : n->shard().omap()) u.logical_bytes += e.logical_size;
    r.physical_bytes += u.physical_bytes;
    r.logical_bytes += u.logical_bytes;
    r.per_node.push_back(u);
  }
  r.nodes = r.per_node.size();
  r.savings_percent =
      r.logical_bytes == 0
          ? 0.0
          : 100.0 * (1.0 - static_cast<double>(r.physical_bytes) /
                               static_cast<double>(r.logical_bytes));
  return r;
}

std::string format_human(const SavingsReport& r) {
  std::string out = fmt::format(
      "mode {}  nodes {}\nlogical  {:>14} bytes\nphysical {:>14} bytes\n"
      "savings  {:>13.2f} %\n",
      mode_name(r.mode), r.nodes, r.logical_bytes, r.physical_bytes,
      r.savings_percent);
  if (r.oracle_bytes) out += fmt::format("oracle   {:>14} bytes\n", *r.oracle_bytes);
  out += fmt::format("{:>6} {:>14} {:>8} {:>8} {:>14}\n", "node", "physical", "chunks",
                     "objects", "logical");
  for (const auto& u : r.per_node) {
    out += fmt::format("{:>6} {:>14} {:>8} {:>8} {:>14}\n", u.id.value, u.physical_bytes,
                       u.chunks, u.objects, u.logical_bytes);
  }
  return out;
}

std::string format_json_lines(const SavingsReport& r) {
  nlohmann::ordered_json total;
  total["kind"] = "total";
  total["mode"] = std::string(mode_name(r.mode));
  total["nodes"] = r.nodes;
  total["logical_bytes"] = r.logical_bytes;
  total["physical_bytes"] = r.physical_bytes;
  total["savings_percent"] = r.savings_percent;
  if (r.oracle_bytes) {
    total["oracle_bytes"] = *r.oracle_bytes;
  } else {
    total["oracle_bytes"] = nullptr;
  }
  std::string out = total.dump() + "\n";
  for (const auto& u : r.per_node) {
    nlohmann::ordered_json j;
    j["kind"] = "node";
    j["node"] = u.id.value;
    j["physical_bytes"] = u.physical_bytes;
    j["chunks"] = u.chunks;
    j["objects"] = u.objects;
    j["logical_bytes"] = u.logical_bytes;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace cwdedup
