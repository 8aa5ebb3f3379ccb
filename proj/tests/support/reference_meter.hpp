#pragma once

// Naive two-pass flow meter used as an oracle: group packets by five-tuple,
// replay the expiration rules per group, then compute every feature vector
// directly from packet lists. Shares no code with FlowMeter beyond the
// value types.

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "pflow/pflow.hpp"
#include "support/helpers.hpp"

namespace pflow::testing {

inline FeatureVector reference_features(const std::vector<const RawPacket*>& pkts,
                                        const Endpoint& anchor_src) {
  FeatureVector v;
  if (pkts.empty()) return v;
  v[kDurationIndex] = static_cast<double>(pkts.back()->ts_us - pkts.front()->ts_us) / 1000.0;
  for (int s = 0; s < 3; ++s) {
    std::vector<const RawPacket*> sel;
    for (auto* p : pkts) {
      const bool fwd = p->src() == anchor_src;
      if (s == 0 || (s == 1 && fwd) || (s == 2 && !fwd)) sel.push_back(p);
    }
    const auto scope = static_cast<Scope>(s);
    auto set = [&](ScopeFeature f, double x) { v[feature_index(scope, f)] = x; };
    set(ScopeFeature::packets, static_cast<double>(sel.size()));
    double bytes = 0, payload = 0;
    for (auto* p : sel) {
      bytes += p->wire_len;
      payload += p->payload_len;
    }
    set(ScopeFeature::bytes, bytes);
    set(ScopeFeature::payload_bytes, payload);
    if (!sel.empty()) {
      double lo = 1e300, hi = -1e300;
      for (auto* p : sel) {
        lo = std::min<double>(lo, p->wire_len);
        hi = std::max<double>(hi, p->wire_len);
      }
      const double mean = bytes / static_cast<double>(sel.size());
      double ss = 0;
      for (auto* p : sel) ss += (p->wire_len - mean) * (p->wire_len - mean);
      set(ScopeFeature::min_ps, lo);
      set(ScopeFeature::mean_ps, mean);
      set(ScopeFeature::max_ps, hi);
      set(ScopeFeature::stddev_ps, sel.size() > 1 ? std::sqrt(ss / static_cast<double>(sel.size())) : 0.0);
    }
    if (sel.size() > 1) {
      std::vector<double> gaps;
      for (std::size_t i = 1; i < sel.size(); ++i) {
        gaps.push_back(static_cast<double>(sel[i]->ts_us - sel[i - 1]->ts_us) / 1000.0);
      }
      double sum = 0;
      for (double g : gaps) sum += g;
      const double mean = sum / static_cast<double>(gaps.size());
      double ss = 0;
      for (double g : gaps) ss += (g - mean) * (g - mean);
      set(ScopeFeature::min_piat_ms, *std::min_element(gaps.begin(), gaps.end()));
      set(ScopeFeature::mean_piat_ms, mean);
      set(ScopeFeature::max_piat_ms, *std::max_element(gaps.begin(), gaps.end()));
      set(ScopeFeature::stddev_piat_ms, std::sqrt(ss / static_cast<double>(gaps.size())));
    }
  }
  for (auto* p : pkts) {
    const bool fwd = p->src() == anchor_src;
    for (int b = 0; b < 8; ++b) {
      if (p->tcp_flags & (1 << b)) v[flag_index(b)] += 1;
    }
    if (p->tcp_flags & tcp::kFin) v[fwd ? kSrc2DstFin : kDst2SrcFin] += 1;
    if (p->tcp_flags & tcp::kRst) v[fwd ? kSrc2DstRst : kDst2SrcRst] += 1;
  }
  return v;
}

inline MeterOutput reference_meter(const PacketTrace& trace, const MeterConfig& cfg) {
  const std::int64_t idle = std::llround(cfg.idle_timeout_s * 1e6);
  const std::int64_t active = std::llround(cfg.active_timeout_s * 1e6);

  // Pass 1: packet indices per five-tuple, in trace order.
  std::map<FlowKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < trace.packets.size(); ++i) {
    groups[FlowKey::of(trace.packets[i])].push_back(i);
  }

  struct Flow {
    std::vector<std::size_t> idx;
    ExpirationReason reason;
    std::size_t close_at;  // packet index that closed it
    int sub;               // 0: closed before that packet, 2: by it
  };
  std::vector<Flow> flows;
  for (const auto& [key, idx] : groups) {
    Flow cur{{}, ExpirationReason::end_of_trace, trace.packets.size(), 3};
    for (auto i : idx) {
      const auto& p = trace.packets[i];
      if (!cur.idx.empty()) {
        const auto& first = trace.packets[cur.idx.front()];
        const auto& last = trace.packets[cur.idx.back()];
        std::optional<ExpirationReason> why;
        if (p.ts_us - last.ts_us > idle) why = ExpirationReason::idle;
        else if (p.ts_us - first.ts_us >= active) why = ExpirationReason::active;
        if (why) {
          flows.push_back({cur.idx, *why, i, 0});
          cur = {{}, ExpirationReason::end_of_trace, trace.packets.size(), 3};
        }
      }
      cur.idx.push_back(i);
      if (cfg.fin_rst_expiration && (p.tcp_flags & (tcp::kFin | tcp::kRst))) {
        flows.push_back({cur.idx, ExpirationReason::fin_rst, i, 2});
        cur = {{}, ExpirationReason::end_of_trace, trace.packets.size(), 3};
      }
    }
    if (!cur.idx.empty()) flows.push_back(cur);
  }

  // Pass 2: features, snapshots and emission order.
  using RecordKey = std::tuple<std::size_t, int, std::int64_t, std::uint64_t, FlowKey>;
  std::vector<std::pair<RecordKey, FlowRecord>> records;
  using SnapKey = std::tuple<std::size_t, Trigger>;
  std::vector<std::pair<SnapKey, FlowSnapshot>> snaps;

  for (const auto& f : flows) {
    const auto& first = trace.packets[f.idx.front()];
    const Endpoint anchor = first.src();
    std::vector<const RawPacket*> pkts;
    for (auto i : f.idx) pkts.push_back(&trace.packets[i]);
    const FlowId id = FlowId::of(FlowKey::of(first), first.ts_us);

    FlowRecord r;
    r.id = id;
    r.src = anchor;
    r.dst = first.dst();
    r.first_us = first.ts_us;
    r.last_us = pkts.back()->ts_us;
    r.features = reference_features(pkts, anchor);
    r.reason = f.reason;
    const bool at_end = f.reason == ExpirationReason::end_of_trace;
    records.push_back({RecordKey{f.close_at, f.sub, at_end ? id.start_us : 0, at_end ? id.hash64 : 0,
                                 at_end ? id.key : FlowKey{}},
                       r});

    auto prefix = [&](std::size_t len) {
      return std::vector<const RawPacket*>(pkts.begin(), pkts.begin() + static_cast<std::ptrdiff_t>(len));
    };
    auto emit = [&](Trigger t, std::size_t len) {
      snaps.push_back({SnapKey{f.idx[len - 1], t},
                       FlowSnapshot{id, t, reference_features(prefix(len), anchor), pkts[len - 1]->ts_us}});
    };
    for (auto n : cfg.pc_triggers) {
      if (static_cast<std::size_t>(n) <= pkts.size()) emit(Trigger::pc(n), static_cast<std::size_t>(n));
    }
    for (auto target : cfg.fd_triggers_ms) {
      for (std::size_t len = 1; len <= pkts.size(); ++len) {
        const double d = static_cast<double>(pkts[len - 1]->ts_us - first.ts_us) / 1000.0;
        if (d >= (1.0 - cfg.fd_tolerance) * static_cast<double>(target)) {
          if (d <= (1.0 + cfg.fd_tolerance) * static_cast<double>(target)) emit(Trigger::fd(target), len);
          break;
        }
      }
    }
    for (auto b : cfg.byte_triggers) {
      double bytes = 0;
      for (std::size_t len = 1; len <= pkts.size(); ++len) {
        bytes += pkts[len - 1]->wire_len;
        if (bytes >= static_cast<double>(b)) {
          emit(Trigger::bt(b), len);
          break;
        }
      }
    }
  }

  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::stable_sort(snaps.begin(), snaps.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  MeterOutput out;
  for (auto& [k, r] : records) out.records.push_back(std::move(r));
  for (auto& [k, s] : snaps) out.snapshots.push_back(std::move(s));
  return out;
}

// Field-for-field comparison: integers exact, reals within `rel`.
inline bool outputs_match(const MeterOutput& a, const MeterOutput& b, std::string* why = nullptr,
                          double rel = 1e-9) {
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (a.records.size() != b.records.size()) {
    return fail("record count " + std::to_string(a.records.size()) + " vs " + std::to_string(b.records.size()));
  }
  if (a.snapshots.size() != b.snapshots.size()) {
    return fail("snapshot count " + std::to_string(a.snapshots.size()) + " vs " +
                std::to_string(b.snapshots.size()));
  }
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (!(x.id == y.id) || !(x.src == y.src) || !(x.dst == y.dst) || x.first_us != y.first_us ||
        x.last_us != y.last_us || x.reason != y.reason) {
      return fail("record " + std::to_string(i) + " identity differs");
    }
    if (!features_near(x.features, y.features, rel)) return fail("record " + std::to_string(i) + " features differ");
  }
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    const auto& x = a.snapshots[i];
    const auto& y = b.snapshots[i];
    if (!(x.parent_id == y.parent_id) || !(x.trigger == y.trigger) || x.exported_at_us != y.exported_at_us) {
      return fail("snapshot " + std::to_string(i) + " identity differs");
    }
    if (!features_near(x.features, y.features, rel)) return fail("snapshot " + std::to_string(i) + " features differ");
  }
  return true;
}

}  // namespace pflow::testing
