#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pflow/pflow.hpp"

namespace pflow::testing {

inline RawPacket make_packet(std::int64_t ts_us, const std::string& src, std::uint16_t sport,
                             const std::string& dst, std::uint16_t dport,
                             std::uint8_t proto = kProtoTcp, std::uint8_t flags = tcp::kAck,
                             std::uint32_t payload = 100) {
  RawPacket p;
  p.ts_us = ts_us;
  p.src_ip = IpAddress::must_parse(src);
  p.dst_ip = IpAddress::must_parse(dst);
  p.src_port = sport;
  p.dst_port = dport;
  p.protocol = proto;
  p.tcp_flags = proto == kProtoTcp ? flags : 0;
  p.payload_len = payload;
  p.wire_len = pcap::header_overhead(p.src_ip.is_v4(), proto) + payload;
  return p;
}

inline bool near(double a, double b, double rel = 1e-9) {
  return std::fabs(a - b) <= rel * std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline bool features_near(const FeatureVector& a, const FeatureVector& b, double rel = 1e-9) {
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (!near(a[i], b[i], rel)) return false;
  }
  return true;
}

// Random trace over a small endpoint pool so flows collide, split on timeouts
// and carry FIN/RST mid-stream. Gaps include zeros and long silences.
struct FuzzTraceOptions {
  std::size_t max_packets = 1000;
  std::size_t hosts = 5;
  std::size_t ports = 3;
  double fin_rst_chance = 0.03;
  std::int64_t long_gap_us = 2'000'000;
};

inline PacketTrace fuzz_trace(std::uint64_t seed, const FuzzTraceOptions& o = {}) {
  Rng rng(seed);
  PacketTrace t;
  t.source = "fuzz:" + std::to_string(seed);
  const std::size_t n = 1 + rng.below(o.max_packets);
  std::int64_t ts = 1'000'000'000;
  for (std::size_t i = 0; i < n; ++i) {
    const auto roll = rng.unit();
    if (roll < 0.1) ts += 0;
    else if (roll < 0.97) ts += rng.between(1, 40'000);
    else ts += rng.between(o.long_gap_us / 2, o.long_gap_us * 2);

    const auto h1 = rng.below(o.hosts), h2 = rng.below(o.hosts);
    const auto proto = rng.chance(0.8) ? kProtoTcp : kProtoUdp;
    std::uint8_t flags = tcp::kAck;
    if (rng.chance(o.fin_rst_chance)) flags |= rng.chance(0.5) ? tcp::kFin : tcp::kRst;
    if (rng.chance(0.05)) flags |= tcp::kSyn;
    if (rng.chance(0.3)) flags |= tcp::kPsh;
    auto p = make_packet(ts, "10.0.0." + std::to_string(1 + h1), static_cast<std::uint16_t>(1000 + rng.below(o.ports)),
                         "10.0.0." + std::to_string(1 + h2), static_cast<std::uint16_t>(80 + rng.below(o.ports)),
                         proto, flags, static_cast<std::uint32_t>(rng.chance(0.2) ? 0 : rng.between(1, 1400)));
    t.packets.push_back(p);
  }
  return t;
}

inline MeterConfig fuzz_meter_config(std::uint64_t seed) {
  Rng rng(seed ^ 0x5eedull);
  MeterConfig c;
  c.idle_timeout_s = 0.5 + rng.unit() * 2.0;
  c.active_timeout_s = 1.0 + rng.unit() * 5.0;
  c.fin_rst_expiration = rng.chance(0.7);
  c.fd_triggers_ms = {1, 5, 10, 50, 100, 150, 300, 500, 1000};
  c.byte_triggers = rng.chance(0.5) ? std::set<std::int64_t>{500, 2000, 10000} : std::set<std::int64_t>{};
  return c;
}

}  // namespace pflow::testing
