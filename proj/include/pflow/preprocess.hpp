#pragma once

// Duplicate suppression and timestamp reordering applied to raw traces
// before flow metering.

#include <algorithm>
#include <cstdint>
#include <set>
#include <unordered_map>
#include <vector>

#include "pflow/packet.hpp"

namespace pflow {

inline constexpr std::int64_t kDefaultDedupWindowUs = 10000;

namespace detail {

inline std::uint64_t content_hash(const RawPacket& p) {
  std::uint64_t h = fnv1a(p.src_ip.data(), p.src_ip.size());
  h = fnv1a(p.dst_ip.data(), p.dst_ip.size(), h);
  const std::uint64_t scalars[] = {p.src_port, p.dst_port, p.protocol, p.tcp_flags,
                                   p.payload_len, p.wire_len,
                                   p.payload_digest.value_or(0),
                                   p.payload_digest.has_value() ? 1u : 0u};
  return fnv1a(reinterpret_cast<const std::uint8_t*>(scalars), sizeof(scalars), h);
}

}  // namespace detail

// Drops a packet iff an identical packet appears earlier in the input with a
// timestamp difference of at most window_us (in either direction, so the
// input need not be sorted). Survivors keep their relative order.
inline PacketTrace dedup(const PacketTrace& trace,
                         std::int64_t window_us = kDefaultDedupWindowUs) {
  struct Seen {
    const RawPacket* exemplar;
    std::multiset<std::int64_t> times;
  };
  // Buckets by content hash; each bucket may hold distinct contents that collide.
  std::unordered_map<std::uint64_t, std::vector<Seen>> seen;
  PacketTrace out;
  out.source = trace.source;
  out.skipped = trace.skipped;
  for (const auto& pkt : trace.packets) {
    auto& bucket = seen[detail::content_hash(pkt)];
    auto it = std::find_if(bucket.begin(), bucket.end(),
                           [&](const Seen& s) { return s.exemplar->same_content(pkt); });
    if (it == bucket.end()) {
      bucket.push_back({&pkt, {}});
      it = std::prev(bucket.end());
    }
    auto near = it->times.lower_bound(pkt.ts_us - window_us);
    const bool duplicate = near != it->times.end() && *near <= pkt.ts_us + window_us;
    it->times.insert(pkt.ts_us);
    if (!duplicate) out.packets.push_back(pkt);
  }
  return out;
}

// Stable sort by timestamp.
inline PacketTrace reorder(PacketTrace trace) {
  std::stable_sort(trace.packets.begin(), trace.packets.end(),
                   [](const RawPacket& a, const RawPacket& b) { return a.ts_us < b.ts_us; });
  return trace;
}

// Number of packets whose timestamp is lower than their predecessor's.
inline std::size_t count_out_of_order(const PacketTrace& trace) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < trace.packets.size(); ++i) {
    if (trace.packets[i].ts_us < trace.packets[i - 1].ts_us) ++n;
  }
  return n;
}

}  // namespace pflow
