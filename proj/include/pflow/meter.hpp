#pragma once

// Single-pass bidirectional flow metering with idle/active timeouts, FIN/RST
// expiration and partial-flow snapshots at packet-count, duration and byte
// triggers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pflow/error.hpp"
#include "pflow/flow.hpp"
#include "pflow/packet.hpp"

namespace pflow {

enum class ExpirationReason : std::uint8_t { idle, active, fin_rst, end_of_trace };

inline std::string_view to_string(ExpirationReason r) {
  switch (r) {
    case ExpirationReason::idle: return "idle";
    case ExpirationReason::active: return "active";
    case ExpirationReason::fin_rst: return "fin_rst";
    case ExpirationReason::end_of_trace: return "end_of_trace";
  }
  return "?";
}

struct FlowRecord {
  FlowId id;
  Endpoint src;  // orientation of the first packet; defines src2dst
  Endpoint dst;
  std::int64_t first_us = 0;
  std::int64_t last_us = 0;
  FeatureVector features;
  ExpirationReason reason = ExpirationReason::end_of_trace;

  friend bool operator==(const FlowRecord&, const FlowRecord&) = default;
};

struct FlowSnapshot {
  FlowId parent_id;
  Trigger trigger;
  FeatureVector features;
  std::int64_t exported_at_us = 0;

  friend bool operator==(const FlowSnapshot&, const FlowSnapshot&) = default;
};

struct MeterConfig {
  double idle_timeout_s = 60.0;
  double active_timeout_s = 18000.0;
  bool fin_rst_expiration = true;
  std::set<std::int64_t> pc_triggers = {2,  3,  4,  5,  6,  7,  8,  9,  10, 11,
                                        12, 13, 14, 15, 16, 17, 18, 19, 20};
  std::set<std::int64_t> fd_triggers_ms = {5,    10,   50,    100,   150,   300,
                                           500,  1000, 5000,  10000, 15000, 20000};
  double fd_tolerance = 0.20;
  std::set<std::int64_t> byte_triggers;

  std::int64_t idle_timeout_us() const { return std::llround(idle_timeout_s * 1e6); }
  std::int64_t active_timeout_us() const { return std::llround(active_timeout_s * 1e6); }

  void validate() const {
    if (!(idle_timeout_s > 0) || !(active_timeout_s > 0)) {
      throw InvalidConfig("timeouts must be positive");
    }
    if (!(fd_tolerance >= 0 && fd_tolerance < 1)) {
      throw InvalidConfig("fd_tolerance must lie in [0, 1)");
    }
    auto positive = [](const std::set<std::int64_t>& s) {
      return s.empty() || *s.begin() > 0;
    };
    if (!positive(pc_triggers) || !positive(fd_triggers_ms) || !positive(byte_triggers)) {
      throw InvalidConfig("trigger values must be positive");
    }
  }

  std::vector<Trigger> all_triggers() const {
    std::vector<Trigger> out;
    for (auto n : pc_triggers) out.push_back(Trigger::pc(n));
    for (auto t : fd_triggers_ms) out.push_back(Trigger::fd(t));
    for (auto b : byte_triggers) out.push_back(Trigger::bt(b));
    return out;
  }
};

struct MeterOutput {
  std::vector<FlowRecord> records;
  std::vector<FlowSnapshot> snapshots;
};

// Streaming meter. Feed packets in non-decreasing timestamp order, then call
// finish(). One instance owns its flow table exclusively.
class FlowMeter {
public:
  explicit FlowMeter(MeterConfig config)
      : config_(std::move(config)),
        idle_us_(config_.idle_timeout_us()),
        active_us_(config_.active_timeout_us()),
        fd_targets_(config_.fd_triggers_ms.begin(), config_.fd_triggers_ms.end()),
        byte_targets_(config_.byte_triggers.begin(), config_.byte_triggers.end()) {
    config_.validate();
  }

  void process(const RawPacket& pkt) {
    if (pkt.ts_us < last_ts_) {
      throw UnsortedTrace("timestamp " + std::to_string(pkt.ts_us) + " after " +
                          std::to_string(last_ts_) + " (packet " + std::to_string(seen_) + ")");
    }
    last_ts_ = pkt.ts_us;
    ++seen_;

    const FlowKey key = FlowKey::of(pkt);
    auto it = table_.find(key);
    if (it != table_.end()) {
      const ActiveFlow& live = it->second;
      if (pkt.ts_us - live.last_us > idle_us_) {
        expire(it, ExpirationReason::idle);
        it = table_.end();
      } else if (pkt.ts_us - live.first_us >= active_us_) {
        expire(it, ExpirationReason::active);
        it = table_.end();
      }
    }
    if (it == table_.end()) {
      it = table_.emplace(key, open(key, pkt)).first;
    }

    ActiveFlow& flow = it->second;
    flow.last_us = pkt.ts_us;
    flow.acc.add(pkt, pkt.src() == flow.src);
    emit_snapshots(flow);

    if (config_.fin_rst_expiration && (pkt.tcp_flags & (tcp::kFin | tcp::kRst))) {
      expire(it, ExpirationReason::fin_rst);
    }
  }

  // Expires every live flow (reason end_of_trace) ordered by start time then
  // flow hash, and returns everything emitted since construction.
  MeterOutput finish() {
    std::vector<decltype(table_)::iterator> live;
    live.reserve(table_.size());
    for (auto it = table_.begin(); it != table_.end(); ++it) live.push_back(it);
    std::sort(live.begin(), live.end(), [](const auto& x, const auto& y) {
      const auto& a = x->second.id;
      const auto& b = y->second.id;
      if (a.start_us != b.start_us) return a.start_us < b.start_us;
      if (a.hash64 != b.hash64) return a.hash64 < b.hash64;
      return a.key < b.key;
    });
    for (auto it : live) out_.records.push_back(record_of(it->second, ExpirationReason::end_of_trace));
    table_.clear();
    return std::move(out_);
  }

  std::size_t live_flows() const { return table_.size(); }

private:
  struct ActiveFlow {
    FlowId id;
    Endpoint src;
    Endpoint dst;
    std::int64_t first_us = 0;
    std::int64_t last_us = 0;
    FeatureAccumulator acc;
    std::size_t next_fd = 0;    // first FD target not yet emitted or missed
    std::size_t next_byte = 0;  // first byte target not yet reached
  };

  using Table = std::unordered_map<FlowKey, ActiveFlow, FlowKeyHash>;

  ActiveFlow open(const FlowKey& key, const RawPacket& pkt) const {
    ActiveFlow f;
    f.id = FlowId::of(key, pkt.ts_us);
    f.src = pkt.src();
    f.dst = pkt.dst();
    f.first_us = f.last_us = pkt.ts_us;
    return f;
  }

  static FlowRecord record_of(const ActiveFlow& f, ExpirationReason reason) {
    return FlowRecord{f.id, f.src, f.dst, f.first_us, f.last_us,
                      f.acc.features(f.first_us, f.last_us), reason};
  }

  void expire(Table::iterator it, ExpirationReason reason) {
    out_.records.push_back(record_of(it->second, reason));
    table_.erase(it);
  }

  void snapshot(const ActiveFlow& f, Trigger t) {
    out_.snapshots.push_back(
        FlowSnapshot{f.id, t, f.acc.features(f.first_us, f.last_us), f.last_us});
  }

  void emit_snapshots(ActiveFlow& f) {
    const auto packets = static_cast<std::int64_t>(f.acc.packets());
    if (config_.pc_triggers.contains(packets)) snapshot(f, Trigger::pc(packets));

    const double duration_ms = static_cast<double>(f.last_us - f.first_us) / 1000.0;
    while (f.next_fd < fd_targets_.size()) {
      const auto target = static_cast<double>(fd_targets_[f.next_fd]);
      if (duration_ms < (1.0 - config_.fd_tolerance) * target) break;
      if (duration_ms <= (1.0 + config_.fd_tolerance) * target) {
        snapshot(f, Trigger::fd(fd_targets_[f.next_fd]));
      }
      ++f.next_fd;
    }

    const auto bytes = static_cast<std::int64_t>(f.acc.bytes());
    while (f.next_byte < byte_targets_.size() && bytes >= byte_targets_[f.next_byte]) {
      snapshot(f, Trigger::bt(byte_targets_[f.next_byte]));
      ++f.next_byte;
    }
  }

  MeterConfig config_;
  std::int64_t idle_us_;
  std::int64_t active_us_;
  std::vector<std::int64_t> fd_targets_;
  std::vector<std::int64_t> byte_targets_;
  Table table_;
  MeterOutput out_;
  std::int64_t last_ts_ = INT64_MIN;
  std::size_t seen_ = 0;
};

inline MeterOutput meter(const PacketTrace& trace, const MeterConfig& config) {
  FlowMeter m(config);
  for (const auto& pkt : trace.packets) m.process(pkt);
  return m.finish();
}

}  // namespace pflow
