#pragma once

// Ground-truth labeling of flows from ordered endpoint/protocol/time rules.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pflow/error.hpp"
#include "pflow/meter.hpp"
#include "pflow/packet.hpp"

namespace pflow {

inline const std::string kBenignLabel = "BENIGN";

// Address prefix; a plain address is a full-length prefix.
struct IpNetwork {
  IpAddress base;
  int prefix = 32;

  static IpNetwork parse(std::string_view text) {
    IpNetwork net;
    const auto slash = text.find('/');
    net.base = IpAddress::must_parse(text.substr(0, slash));
    const int max_prefix = net.base.is_v4() ? 32 : 128;
    net.prefix = max_prefix;
    if (slash != std::string_view::npos) {
      const auto digits = text.substr(slash + 1);
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), net.prefix);
      if (ec != std::errc{} || ptr != digits.data() + digits.size() || net.prefix < 0 ||
          net.prefix > max_prefix) {
        throw InvalidConfig("bad prefix length in " + std::string(text));
      }
    }
    return net;
  }

  bool contains(const IpAddress& ip) const {
    if (ip.family() != base.family()) return false;
    int bits = prefix;
    for (std::size_t i = 0; bits > 0; ++i, bits -= 8) {
      const std::uint8_t mask = bits >= 8 ? 0xff : static_cast<std::uint8_t>(0xff << (8 - bits));
      if ((ip.data()[i] & mask) != (base.data()[i] & mask)) return false;
    }
    return true;
  }

  std::string to_string() const { return base.to_string() + "/" + std::to_string(prefix); }

  friend bool operator==(const IpNetwork&, const IpNetwork&) = default;
};

struct PortRange {
  std::uint16_t lo = 0;
  std::uint16_t hi = 65535;

  bool contains(std::uint16_t p) const { return p >= lo && p <= hi; }
  friend bool operator==(const PortRange&, const PortRange&) = default;
};

struct TimeWindow {
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;

  // Inclusive overlap with [first, last].
  bool overlaps(std::int64_t first, std::int64_t last) const {
    return first <= end_us && last >= start_us;
  }
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

// Empty address or port sets are wildcards.
struct LabelRule {
  std::string label;
  std::vector<IpNetwork> src_ips;
  std::vector<IpNetwork> dst_ips;
  std::vector<PortRange> src_ports;
  std::vector<PortRange> dst_ports;
  std::optional<std::uint8_t> protocol;
  std::optional<TimeWindow> window;
  bool bidirectional = true;

  friend bool operator==(const LabelRule&, const LabelRule&) = default;
};

struct RuleSet {
  std::vector<LabelRule> rules;
  std::string default_label = kBenignLabel;
};

// The parts of a flow a rule can look at.
struct FlowView {
  Endpoint src;
  Endpoint dst;
  std::uint8_t protocol = 0;
  std::int64_t first_us = 0;
  std::int64_t last_us = 0;

  static FlowView of(const FlowRecord& r) {
    return {r.src, r.dst, r.id.key.protocol, r.first_us, r.last_us};
  }
};

namespace detail {

template <typename Set, typename Value>
bool any_contains(const Set& set, const Value& v) {
  if (set.empty()) return true;
  for (const auto& item : set) {
    if (item.contains(v)) return true;
  }
  return false;
}

inline bool oriented_match(const LabelRule& r, const Endpoint& src, const Endpoint& dst) {
  return any_contains(r.src_ips, src.ip) && any_contains(r.dst_ips, dst.ip) &&
         any_contains(r.src_ports, src.port) && any_contains(r.dst_ports, dst.port);
}

}  // namespace detail

inline bool rule_matches(const LabelRule& rule, const FlowView& flow) {
  if (rule.protocol && *rule.protocol != flow.protocol) return false;
  if (rule.window && !rule.window->overlaps(flow.first_us, flow.last_us)) return false;
  if (detail::oriented_match(rule, flow.src, flow.dst)) return true;
  return rule.bidirectional && detail::oriented_match(rule, flow.dst, flow.src);
}

inline const std::string& label_flow(const FlowView& flow, const RuleSet& rules) {
  for (const auto& rule : rules.rules) {
    if (rule_matches(rule, flow)) return rule.label;
  }
  return rules.default_label;
}

inline const std::string& label_flow(const FlowRecord& record, const RuleSet& rules) {
  return label_flow(FlowView::of(record), rules);
}

// ---------------------------------------------------------------------------
// JSON rule files

namespace detail {

inline PortRange parse_port_range(const nlohmann::json& j) {
  auto port = [](std::int64_t v) {
    if (v < 0 || v > 65535) throw InvalidConfig("port out of range: " + std::to_string(v));
    return static_cast<std::uint16_t>(v);
  };
  if (j.is_number_integer()) {
    const auto p = port(j.get<std::int64_t>());
    return {p, p};
  }
  if (j.is_array() && j.size() == 2) {
    PortRange r{port(j[0].get<std::int64_t>()), port(j[1].get<std::int64_t>())};
    if (r.lo > r.hi) throw InvalidConfig("empty port range");
    return r;
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const auto dash = s.find('-');
    try {
      if (dash == std::string::npos) {
        const auto p = port(std::stoll(s));
        return {p, p};
      }
      PortRange r{port(std::stoll(s.substr(0, dash))), port(std::stoll(s.substr(dash + 1)))};
      if (r.lo > r.hi) throw InvalidConfig("empty port range " + s);
      return r;
    } catch (const std::logic_error&) {
      throw InvalidConfig("bad port range " + s);
    }
  }
  throw InvalidConfig("bad port entry " + j.dump());
}

}  // namespace detail

inline LabelRule rule_from_json(const nlohmann::json& j) {
  LabelRule r;
  r.label = j.at("label").get<std::string>();
  if (r.label.empty()) throw InvalidConfig("rule label must be non-empty");
  for (const auto& ip : j.value("src_ips", nlohmann::json::array()))
    r.src_ips.push_back(IpNetwork::parse(ip.get<std::string>()));
  for (const auto& ip : j.value("dst_ips", nlohmann::json::array()))
    r.dst_ips.push_back(IpNetwork::parse(ip.get<std::string>()));
  for (const auto& p : j.value("src_ports", nlohmann::json::array()))
    r.src_ports.push_back(detail::parse_port_range(p));
  for (const auto& p : j.value("dst_ports", nlohmann::json::array()))
    r.dst_ports.push_back(detail::parse_port_range(p));
  if (j.contains("protocol") && !j["protocol"].is_null())
    r.protocol = static_cast<std::uint8_t>(j["protocol"].get<int>());
  if (j.contains("window_us") && !j["window_us"].is_null()) {
    const auto& w = j["window_us"];
    if (!w.is_array() || w.size() != 2) throw InvalidConfig("window_us must be [start, end]");
    r.window = TimeWindow{w[0].get<std::int64_t>(), w[1].get<std::int64_t>()};
    if (r.window->start_us > r.window->end_us) throw InvalidConfig("window start after end");
  }
  r.bidirectional = j.value("bidirectional", true);
  return r;
}

inline nlohmann::json rule_to_json(const LabelRule& r) {
  nlohmann::json j;
  j["label"] = r.label;
  auto nets = [](const std::vector<IpNetwork>& v) {
    auto a = nlohmann::json::array();
    for (const auto& n : v) a.push_back(n.to_string());
    return a;
  };
  auto ports = [](const std::vector<PortRange>& v) {
    auto a = nlohmann::json::array();
    for (const auto& p : v) a.push_back({p.lo, p.hi});
    return a;
  };
  j["src_ips"] = nets(r.src_ips);
  j["dst_ips"] = nets(r.dst_ips);
  j["src_ports"] = ports(r.src_ports);
  j["dst_ports"] = ports(r.dst_ports);
  j["protocol"] = r.protocol ? nlohmann::json(*r.protocol) : nlohmann::json(nullptr);
  j["window_us"] = r.window ? nlohmann::json::array({r.window->start_us, r.window->end_us})
                            : nlohmann::json(nullptr);
  j["bidirectional"] = r.bidirectional;
  return j;
}

inline RuleSet rules_from_json(const nlohmann::json& j) {
  RuleSet rs;
  try {
    rs.default_label = j.value("default_label", kBenignLabel);
    for (const auto& r : j.value("rules", nlohmann::json::array())) rs.rules.push_back(rule_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("rule file: ") + e.what());
  }
  return rs;
}

inline nlohmann::json rules_to_json(const RuleSet& rs) {
  nlohmann::json j;
  j["default_label"] = rs.default_label;
  j["rules"] = nlohmann::json::array();
  for (const auto& r : rs.rules) j["rules"].push_back(rule_to_json(r));
  return j;
}

inline RuleSet load_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UnreadableFile("cannot open rule file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
  return rules_from_json(j);
}

}  // namespace pflow
