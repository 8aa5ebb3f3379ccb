#pragma once

// Deterministic synthetic traffic generator. A spec holds weighted per-class
// flow templates; with a divergence index k > 1, packets 1..k-1 of every flow
// are drawn from one shared profile so classes only differ from packet k on.
//
// JSON schema:
//   {
//     "n_flows": 200,                       // required, 1..64512
//     "start_us": 1499255000000000,         // first possible flow start
//     "span_us": 60000000,                  // flow starts uniform in [start, start+span]
//     "divergence_index": 8,                // optional; 0 or 1 disables the shared prefix
//     "shared_profile": {"payload": [lo, hi], "iat_us": [lo, hi], "p_forward": 0.5},
//     "templates": [{
//       "label": "BENIGN", "weight": 1.0, "protocol": 6,
//       "packets": [lo, hi],
//       "client_ips": ["10.0.0.0/16"], "server_ips": ["192.168.10.50"],
//       "server_ports": [80],
//       "close": "fin" | "rst" | "none",
//       "profile": {"payload": [lo, hi], "iat_us": [lo, hi], "p_forward": 0.5}
//     }]
//   }
// Client ports are 1024 + flow index, so no two generated flows share a five-tuple.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pflow/error.hpp"
#include "pflow/flow.hpp"
#include "pflow/labeling.hpp"
#include "pflow/packet.hpp"
#include "pflow/pcap.hpp"
#include "pflow/rng.hpp"

namespace pflow {

struct Range {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

struct PacketProfile {
  Range payload{64, 512};
  Range iat_us{1000, 10000};
  double p_forward = 0.5;  // chance a data packet travels client -> server
};

enum class CloseKind : std::uint8_t { fin, rst, none };

struct FlowTemplate {
  std::string label = kBenignLabel;
  double weight = 1.0;
  std::uint8_t protocol = kProtoTcp;
  Range packets{3, 10};
  std::vector<IpNetwork> client_ips = {IpNetwork::parse("10.0.0.0/16")};
  std::vector<IpNetwork> server_ips = {IpNetwork::parse("192.168.10.50")};
  std::vector<std::uint16_t> server_ports = {80};
  CloseKind close = CloseKind::fin;
  PacketProfile profile;
  // With a divergence index, only this many packets from it on use `profile`;
  // later packets fall back to the shared profile. 0 means all of them.
  std::size_t signal_packets = 0;
};

struct SynthSpec {
  std::size_t n_flows = 1;
  std::int64_t start_us = 1499255000000000;
  std::int64_t span_us = 60'000'000;
  std::size_t divergence_index = 0;
  PacketProfile shared_profile;
  std::vector<FlowTemplate> templates;
};

struct GroundTruth {
  FlowId id;
  std::string label;
  std::size_t packets = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct SynthResult {
  PacketTrace trace;
  std::vector<GroundTruth> truth;
};

inline constexpr std::size_t kMaxSynthFlows = 64512;

namespace detail {

inline void check_range(const Range& r, std::int64_t min, const std::string& what) {
  if (r.lo < min || r.hi < r.lo) {
    throw InvalidSpec(what + " range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                      "] is invalid");
  }
}

inline void check_profile(const PacketProfile& p, const std::string& what) {
  check_range(p.payload, 0, what + ".payload");
  if (p.payload.hi > 65000) throw InvalidSpec(what + ".payload above 65000 bytes");
  check_range(p.iat_us, 0, what + ".iat_us");
  if (!(p.p_forward >= 0 && p.p_forward <= 1)) throw InvalidSpec(what + ".p_forward not in [0,1]");
}

inline IpAddress random_member(const IpNetwork& net, Rng& rng) {
  std::uint8_t bytes[16];
  std::copy_n(net.base.data(), net.base.size(), bytes);
  int bit = net.prefix;
  const int total = static_cast<int>(net.base.size()) * 8;
  for (; bit < total; ++bit) {
    const auto mask = static_cast<std::uint8_t>(0x80u >> (bit % 8));
    if (rng.next() & 1) bytes[bit / 8] |= mask;
    else bytes[bit / 8] &= static_cast<std::uint8_t>(~mask);
  }
  return IpAddress::from_bytes(net.base.family(), bytes);
}

}  // namespace detail

inline void validate(const SynthSpec& spec) {
  if (spec.templates.empty()) throw InvalidSpec("no flow templates");
  if (spec.n_flows == 0) throw InvalidSpec("n_flows must be positive");
  if (spec.n_flows > kMaxSynthFlows) throw InvalidSpec("n_flows above 64512");
  if (spec.span_us < 0) throw InvalidSpec("span_us must be non-negative");
  detail::check_profile(spec.shared_profile, "shared_profile");
  for (std::size_t i = 0; i < spec.templates.size(); ++i) {
    const auto& t = spec.templates[i];
    const auto where = "templates[" + std::to_string(i) + "]";
    if (t.label.empty()) throw InvalidSpec(where + ".label is empty");
    if (!(t.weight > 0)) throw InvalidSpec(where + ".weight must be positive");
    if (t.protocol != kProtoTcp && t.protocol != kProtoUdp) throw InvalidSpec(where + ".protocol must be 6 or 17");
    detail::check_range(t.packets, 1, where + ".packets");
    if (t.client_ips.empty() || t.server_ips.empty() || t.server_ports.empty()) {
      throw InvalidSpec(where + " needs client_ips, server_ips and server_ports");
    }
    detail::check_profile(t.profile, where + ".profile");
  }
}

inline SynthResult synth_trace(const SynthSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  double total_weight = 0;
  for (const auto& t : spec.templates) total_weight += t.weight;

  struct Generated {
    RawPacket pkt;
    std::size_t order;
  };
  std::vector<Generated> all;
  SynthResult result;
  result.trace.source = "synthetic:" + std::to_string(seed);

  for (std::size_t flow = 0; flow < spec.n_flows; ++flow) {
    double pick = rng.unit() * total_weight;
    std::size_t ti = 0;
    while (ti + 1 < spec.templates.size() && pick >= spec.templates[ti].weight) {
      pick -= spec.templates[ti].weight;
      ++ti;
    }
    const auto& tpl = spec.templates[ti];
    const bool tcp_flow = tpl.protocol == kProtoTcp;

    const Endpoint client{detail::random_member(tpl.client_ips[rng.below(tpl.client_ips.size())], rng),
                          static_cast<std::uint16_t>(1024 + flow)};
    const IpNetwork& server_net = tpl.server_ips[rng.below(tpl.server_ips.size())];
    const Endpoint server{detail::random_member(server_net, rng),
                          tpl.server_ports[rng.below(tpl.server_ports.size())]};
    if (client.ip.family() != server.ip.family()) {
      throw InvalidSpec("template " + tpl.label + " mixes IPv4 and IPv6 pools");
    }
    const auto n_packets = static_cast<std::size_t>(rng.between(tpl.packets.lo, tpl.packets.hi));
    std::int64_t ts = spec.start_us + rng.between(0, spec.span_us);
    const std::int64_t start = ts;

    for (std::size_t j = 1; j <= n_packets; ++j) {
      const bool before = spec.divergence_index > 1 && j < spec.divergence_index;
      const bool after = spec.divergence_index > 0 && tpl.signal_packets > 0 &&
                         j >= std::max<std::size_t>(spec.divergence_index, 1) + tpl.signal_packets;
      const bool shared = before || after;
      const PacketProfile& prof = shared ? spec.shared_profile : tpl.profile;
      if (j > 1) ts += rng.between(prof.iat_us.lo, prof.iat_us.hi);

      bool forward = true;
      std::uint32_t payload = 0;
      std::uint8_t flags = 0;
      if (tcp_flow && j <= 2) {
        forward = j == 1;
        flags = j == 1 ? tcp::kSyn : tcp::kSyn | tcp::kAck;
      } else {
        forward = j == 1 || rng.chance(prof.p_forward);
        payload = static_cast<std::uint32_t>(rng.between(prof.payload.lo, prof.payload.hi));
        if (tcp_flow) flags = tcp::kAck | (payload > 0 ? tcp::kPsh : 0);
      }
      if (tcp_flow && j == n_packets) {
        if (tpl.close == CloseKind::fin) flags |= tcp::kFin | tcp::kAck;
        else if (tpl.close == CloseKind::rst) flags = tcp::kRst | tcp::kAck;
      }

      RawPacket p;
      p.ts_us = ts;
      const Endpoint& s = forward ? client : server;
      const Endpoint& d = forward ? server : client;
      p.src_ip = s.ip;
      p.src_port = s.port;
      p.dst_ip = d.ip;
      p.dst_port = d.port;
      p.protocol = tpl.protocol;
      p.tcp_flags = flags;
      p.payload_len = payload;
      if (payload > 0) p.payload_digest = derive_seed(seed, all.size());
      p.wire_len = pcap::header_overhead(client.ip.is_v4(), tpl.protocol) + payload;
      all.push_back({std::move(p), all.size()});
    }
    result.truth.push_back(
        {FlowId::of(FlowKey::of(client, server, tpl.protocol), start), tpl.label, n_packets});
  }

  std::stable_sort(all.begin(), all.end(),
                   [](const Generated& a, const Generated& b) { return a.pkt.ts_us < b.pkt.ts_us; });
  result.trace.packets.reserve(all.size());
  for (auto& g : all) result.trace.packets.push_back(std::move(g.pkt));
  return result;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline Range range_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw InvalidSpec("expected [lo, hi], got " + j.dump());
  return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>()};
}

inline PacketProfile profile_from_json(const nlohmann::json& j) {
  PacketProfile p;
  if (j.contains("payload")) p.payload = range_from_json(j["payload"]);
  if (j.contains("iat_us")) p.iat_us = range_from_json(j["iat_us"]);
  p.p_forward = j.value("p_forward", p.p_forward);
  return p;
}

inline nlohmann::json profile_to_json(const PacketProfile& p) {
  return {{"payload", {p.payload.lo, p.payload.hi}},
          {"iat_us", {p.iat_us.lo, p.iat_us.hi}},
          {"p_forward", p.p_forward}};
}

}  // namespace detail

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.n_flows = j.at("n_flows").get<std::size_t>();
    s.start_us = j.value("start_us", s.start_us);
    s.span_us = j.value("span_us", s.span_us);
    s.divergence_index = j.value("divergence_index", s.divergence_index);
    if (j.contains("shared_profile")) s.shared_profile = detail::profile_from_json(j["shared_profile"]);
    for (const auto& tj : j.at("templates")) {
      FlowTemplate t;
      t.label = tj.value("label", t.label);
      t.weight = tj.value("weight", t.weight);
      t.protocol = static_cast<std::uint8_t>(tj.value("protocol", int{t.protocol}));
      if (tj.contains("packets")) t.packets = detail::range_from_json(tj["packets"]);
      if (tj.contains("client_ips")) {
        t.client_ips.clear();
        for (const auto& ip : tj["client_ips"]) t.client_ips.push_back(IpNetwork::parse(ip.get<std::string>()));
      }
      if (tj.contains("server_ips")) {
        t.server_ips.clear();
        for (const auto& ip : tj["server_ips"]) t.server_ips.push_back(IpNetwork::parse(ip.get<std::string>()));
      }
      if (tj.contains("server_ports")) t.server_ports = tj["server_ports"].get<std::vector<std::uint16_t>>();
      const auto close = tj.value("close", std::string("fin"));
      if (close == "fin") t.close = CloseKind::fin;
      else if (close == "rst") t.close = CloseKind::rst;
      else if (close == "none") t.close = CloseKind::none;
      else throw InvalidSpec("close must be fin, rst or none");
      if (tj.contains("profile")) t.profile = detail::profile_from_json(tj["profile"]);
      t.signal_packets = tj.value("signal_packets", t.signal_packets);
      s.templates.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(e.what());
  } catch (const InvalidConfig& e) {
    throw InvalidSpec(e.what());
  }
  validate(s);
  return s;
}

inline nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json j;
  j["n_flows"] = s.n_flows;
  j["start_us"] = s.start_us;
  j["span_us"] = s.span_us;
  j["divergence_index"] = s.divergence_index;
  j["shared_profile"] = detail::profile_to_json(s.shared_profile);
  j["templates"] = nlohmann::json::array();
  for (const auto& t : s.templates) {
    nlohmann::json tj;
    tj["label"] = t.label;
    tj["weight"] = t.weight;
    tj["protocol"] = t.protocol;
    tj["packets"] = {t.packets.lo, t.packets.hi};
    tj["client_ips"] = nlohmann::json::array();
    for (const auto& n : t.client_ips) tj["client_ips"].push_back(n.to_string());
    tj["server_ips"] = nlohmann::json::array();
    for (const auto& n : t.server_ips) tj["server_ips"].push_back(n.to_string());
    tj["server_ports"] = t.server_ports;
    tj["close"] = t.close == CloseKind::fin ? "fin" : t.close == CloseKind::rst ? "rst" : "none";
    tj["profile"] = detail::profile_to_json(t.profile);
    tj["signal_packets"] = t.signal_packets;
    j["templates"].push_back(std::move(tj));
  }
  return j;
}

inline nlohmann::json to_json(const std::vector<GroundTruth>& truth) {
  auto arr = nlohmann::json::array();
  for (const auto& g : truth) {
    arr.push_back({{"flow_hash", g.id.hash64},
                   {"six_tuple", six_tuple_string(g.id.key, g.id.start_us)},
                   {"endpoint_a", g.id.key.a.ip.to_string() + ":" + std::to_string(g.id.key.a.port)},
                   {"endpoint_b", g.id.key.b.ip.to_string() + ":" + std::to_string(g.id.key.b.port)},
                   {"protocol", g.id.key.protocol},
                   {"start_us", g.id.start_us},
                   {"packets", g.packets},
                   {"label", g.label}});
  }
  return arr;
}

}  // namespace pflow
