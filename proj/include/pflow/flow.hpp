#pragma once

// Flow identity (canonical five-tuple plus start time) and the bidirectional
// feature vector shared by complete records and partial snapshots.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "pflow/error.hpp"
#include "pflow/packet.hpp"

namespace pflow {

// Direction-agnostic five-tuple: the lexicographically smaller endpoint is `a`.
struct FlowKey {
  Endpoint a;
  Endpoint b;
  std::uint8_t protocol = 0;

  static FlowKey of(const Endpoint& src, const Endpoint& dst, std::uint8_t protocol) {
    return src <= dst ? FlowKey{src, dst, protocol} : FlowKey{dst, src, protocol};
  }
  static FlowKey of(const RawPacket& p) { return of(p.src(), p.dst(), p.protocol); }

  friend bool operator==(const FlowKey&, const FlowKey&) = default;
  friend auto operator<=>(const FlowKey&, const FlowKey&) = default;
};

struct FlowKeyHash {
  std::size_t operator()(const FlowKey& k) const {
    std::uint64_t h = fnv1a(k.a.ip.data(), k.a.ip.size());
    h = fnv1a(k.b.ip.data(), k.b.ip.size(), h);
    const std::uint8_t tail[5] = {static_cast<std::uint8_t>(k.a.port >> 8),
                                  static_cast<std::uint8_t>(k.a.port),
                                  static_cast<std::uint8_t>(k.b.port >> 8),
                                  static_cast<std::uint8_t>(k.b.port), k.protocol};
    return static_cast<std::size_t>(fnv1a(tail, sizeof(tail), h));
  }
};

// "ipA|portA|ipB|portB|proto|start_us": IPs as lowercase hex bytes, ports as
// four lowercase hex digits, protocol and start time in decimal.
inline std::string six_tuple_string(const FlowKey& key, std::int64_t start_us) {
  char port_a[8], port_b[8];
  std::snprintf(port_a, sizeof(port_a), "%04x", key.a.port);
  std::snprintf(port_b, sizeof(port_b), "%04x", key.b.port);
  std::string s = key.a.ip.hex();
  s += '|';
  s += port_a;
  s += '|';
  s += key.b.ip.hex();
  s += '|';
  s += port_b;
  s += '|';
  s += std::to_string(key.protocol);
  s += '|';
  s += std::to_string(start_us);
  return s;
}

// FNV-1a (64-bit) of six_tuple_string(). Stable across runs and platforms.
inline std::uint64_t flow_hash(const FlowKey& key, std::int64_t start_us) {
  return fnv1a(six_tuple_string(key, start_us));
}

struct FlowId {
  FlowKey key;
  std::int64_t start_us = 0;
  std::uint64_t hash64 = 0;

  static FlowId of(const FlowKey& key, std::int64_t start_us) {
    return {key, start_us, flow_hash(key, start_us)};
  }

  friend bool operator==(const FlowId&, const FlowId&) = default;
};

// Readiness trigger for a partial-flow export.
struct Trigger {
  enum class Kind : std::uint8_t { packet_count, duration, bytes };

  Kind kind = Kind::packet_count;
  std::int64_t value = 0;  // packets, milliseconds or bytes

  static Trigger pc(std::int64_t n) { return {Kind::packet_count, n}; }
  static Trigger fd(std::int64_t ms) { return {Kind::duration, ms}; }
  static Trigger bt(std::int64_t bytes) { return {Kind::bytes, bytes}; }

  std::string to_string() const {
    const char* prefix = kind == Kind::packet_count ? "PC=" : kind == Kind::duration ? "FD=" : "BT=";
    return prefix + std::to_string(value);
  }

  static std::optional<Trigger> parse(std::string_view s) {
    if (s.size() < 4 || s[2] != '=') return std::nullopt;
    Trigger t;
    const auto prefix = s.substr(0, 2);
    if (prefix == "PC") t.kind = Kind::packet_count;
    else if (prefix == "FD") t.kind = Kind::duration;
    else if (prefix == "BT") t.kind = Kind::bytes;
    else return std::nullopt;
    const auto digits = s.substr(3);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), t.value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || t.value <= 0) return std::nullopt;
    return t;
  }

  friend bool operator==(const Trigger&, const Trigger&) = default;
  friend auto operator<=>(const Trigger&, const Trigger&) = default;
};

// Dataset provenance: complete flows (no trigger) or one partial-flow trigger.
struct Provenance {
  std::optional<Trigger> trigger;

  static Provenance cf() { return {}; }
  static Provenance of(Trigger t) { return {t}; }
  bool is_cf() const { return !trigger.has_value(); }

  std::string to_string() const { return trigger ? trigger->to_string() : "CF"; }

  static std::optional<Provenance> parse(std::string_view s) {
    if (s == "CF") return cf();
    if (auto t = Trigger::parse(s)) return of(*t);
    return std::nullopt;
  }

  friend bool operator==(const Provenance&, const Provenance&) = default;
  friend auto operator<=>(const Provenance&, const Provenance&) = default;
};

// ---------------------------------------------------------------------------
// Feature schema

enum class Scope : std::size_t { bidirectional = 0, src2dst = 1, dst2src = 2 };

// Per-scope feature offsets.
enum class ScopeFeature : std::size_t {
  packets,
  bytes,
  payload_bytes,
  min_ps,
  mean_ps,
  max_ps,
  stddev_ps,
  min_piat_ms,
  mean_piat_ms,
  max_piat_ms,
  stddev_piat_ms,
};

inline constexpr std::size_t kScopeFeatureCount = 11;
inline constexpr std::size_t kDurationIndex = 0;
inline constexpr std::size_t kFlagBase = 1 + 3 * kScopeFeatureCount;  // 34
inline constexpr std::size_t kDirectionalFlagBase = kFlagBase + 8;     // 42
inline constexpr std::size_t kFeatureCount = kDirectionalFlagBase + 4;  // 46

constexpr std::size_t feature_index(Scope s, ScopeFeature f) {
  return 1 + static_cast<std::size_t>(s) * kScopeFeatureCount + static_cast<std::size_t>(f);
}

// Bidirectional flag counters in tcp flag bit order: fin, syn, rst, psh, ack, urg, ece, cwr.
constexpr std::size_t flag_index(int bit) { return kFlagBase + static_cast<std::size_t>(bit); }

inline constexpr std::size_t kSrc2DstFin = kDirectionalFlagBase + 0;
inline constexpr std::size_t kSrc2DstRst = kDirectionalFlagBase + 1;
inline constexpr std::size_t kDst2SrcFin = kDirectionalFlagBase + 2;
inline constexpr std::size_t kDst2SrcRst = kDirectionalFlagBase + 3;

inline const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = [] {
    std::array<std::string, kFeatureCount> n;
    n[kDurationIndex] = "duration_ms";
    const char* scopes[] = {"bidirectional", "src2dst", "dst2src"};
    const char* fields[] = {"packets",     "bytes",        "payload_bytes", "min_ps",
                            "mean_ps",     "max_ps",       "stddev_ps",     "min_piat_ms",
                            "mean_piat_ms", "max_piat_ms", "stddev_piat_ms"};
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t f = 0; f < kScopeFeatureCount; ++f) {
        n[1 + s * kScopeFeatureCount + f] = std::string(scopes[s]) + "_" + fields[f];
      }
    }
    const char* flags[] = {"fin", "syn", "rst", "psh", "ack", "urg", "ece", "cwr"};
    for (int b = 0; b < 8; ++b) n[flag_index(b)] = std::string("bidirectional_") + flags[b] + "_packets";
    n[kSrc2DstFin] = "src2dst_fin_packets";
    n[kSrc2DstRst] = "src2dst_rst_packets";
    n[kDst2SrcFin] = "dst2src_fin_packets";
    n[kDst2SrcRst] = "dst2src_rst_packets";
    return n;
  }();
  return names;
}

struct FeatureVector {
  std::array<double, kFeatureCount> values{};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  double duration_ms() const { return values[kDurationIndex]; }
  double get(Scope s, ScopeFeature f) const { return values[feature_index(s, f)]; }
  double packets(Scope s = Scope::bidirectional) const { return get(s, ScopeFeature::packets); }
  double bytes(Scope s = Scope::bidirectional) const { return get(s, ScopeFeature::bytes); }
  double payload_bytes(Scope s = Scope::bidirectional) const {
    return get(s, ScopeFeature::payload_bytes);
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// Running per-flow statistics. Sizes and gaps are integers, so sums and sums
// of squares are kept exactly and moments are only rounded at extraction.
class FeatureAccumulator {
public:
  void add(const RawPacket& p, bool forward) {
    add_to(scopes_[0], p);
    add_to(scopes_[forward ? 1 : 2], p);
    for (int b = 0; b < 8; ++b) {
      if (p.tcp_flags & (1u << b)) ++flags_[b];
    }
    if (p.has_flag(tcp::kFin)) ++(forward ? s2d_fin_ : d2s_fin_);
    if (p.has_flag(tcp::kRst)) ++(forward ? s2d_rst_ : d2s_rst_);
  }

  std::uint64_t packets() const { return scopes_[0].packets; }
  std::uint64_t bytes() const { return scopes_[0].bytes; }

  FeatureVector features(std::int64_t first_us, std::int64_t last_us) const {
    FeatureVector v;
    v[kDurationIndex] = static_cast<double>(last_us - first_us) / 1000.0;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& st = scopes_[s];
      const auto scope = static_cast<Scope>(s);
      auto set = [&](ScopeFeature f, double x) { v[feature_index(scope, f)] = x; };
      const auto n = static_cast<double>(st.packets);
      set(ScopeFeature::packets, n);
      set(ScopeFeature::bytes, static_cast<double>(st.bytes));
      set(ScopeFeature::payload_bytes, static_cast<double>(st.payload));
      if (st.packets > 0) {
        set(ScopeFeature::min_ps, static_cast<double>(st.min_ps));
        set(ScopeFeature::mean_ps, static_cast<double>(st.bytes) / n);
        set(ScopeFeature::max_ps, static_cast<double>(st.max_ps));
        set(ScopeFeature::stddev_ps, stddev(st.packets, st.bytes, st.sumsq_ps));
      }
      if (st.packets > 1) {
        const std::uint64_t gaps = st.packets - 1;
        set(ScopeFeature::min_piat_ms, static_cast<double>(st.min_piat) / 1000.0);
        set(ScopeFeature::mean_piat_ms,
            static_cast<double>(st.sum_piat) / static_cast<double>(gaps) / 1000.0);
        set(ScopeFeature::max_piat_ms, static_cast<double>(st.max_piat) / 1000.0);
        set(ScopeFeature::stddev_piat_ms, stddev(gaps, st.sum_piat, st.sumsq_piat) / 1000.0);
      }
    }
    for (int b = 0; b < 8; ++b) v[flag_index(b)] = static_cast<double>(flags_[b]);
    v[kSrc2DstFin] = static_cast<double>(s2d_fin_);
    v[kSrc2DstRst] = static_cast<double>(s2d_rst_);
    v[kDst2SrcFin] = static_cast<double>(d2s_fin_);
    v[kDst2SrcRst] = static_cast<double>(d2s_rst_);
    return v;
  }

private:
  using Wide = unsigned __int128;

  struct ScopeStats {
    std::uint64_t packets = 0;
    std::uint64_t bytes = 0;
    std::uint64_t payload = 0;
    std::uint64_t min_ps = 0;
    std::uint64_t max_ps = 0;
    Wide sumsq_ps = 0;
    std::int64_t last_ts = 0;
    std::uint64_t min_piat = 0;
    std::uint64_t max_piat = 0;
    std::uint64_t sum_piat = 0;
    Wide sumsq_piat = 0;
  };

  static void add_to(ScopeStats& st, const RawPacket& p) {
    const std::uint64_t size = p.wire_len;
    if (st.packets == 0) {
      st.min_ps = st.max_ps = size;
    } else {
      st.min_ps = std::min(st.min_ps, size);
      st.max_ps = std::max(st.max_ps, size);
      const auto gap = static_cast<std::uint64_t>(p.ts_us - st.last_ts);
      if (st.packets == 1) {
        st.min_piat = st.max_piat = gap;
      } else {
        st.min_piat = std::min(st.min_piat, gap);
        st.max_piat = std::max(st.max_piat, gap);
      }
      st.sum_piat += gap;
      st.sumsq_piat += Wide{gap} * gap;
    }
    ++st.packets;
    st.bytes += size;
    st.payload += p.payload_len;
    st.sumsq_ps += Wide{size} * size;
    st.last_ts = p.ts_us;
  }

  // Population standard deviation from exact integer moments.
  static double stddev(std::uint64_t n, std::uint64_t sum, Wide sumsq) {
    if (n < 2) return 0.0;
    const Wide num = Wide{n} * sumsq - Wide{sum} * sum;
    return std::sqrt(static_cast<double>(num)) / static_cast<double>(n);
  }

  std::array<ScopeStats, 3> scopes_{};
  std::array<std::uint64_t, 8> flags_{};
  std::uint64_t s2d_fin_ = 0, s2d_rst_ = 0, d2s_fin_ = 0, d2s_rst_ = 0;
};

}  // namespace pflow
