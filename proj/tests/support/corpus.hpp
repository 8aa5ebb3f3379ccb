#pragma once

// Two-class synthetic corpora whose class signal starts at a chosen packet.

#include <map>

#include "pflow/pflow.hpp"

namespace pflow::testing {

inline const char* const kAttackServer = "192.168.10.51";

// Packets before k share one profile. Attack flows then carry a single large
// packet at position k and return to the shared profile. UDP keeps the first
// packets free of handshake artifacts.
inline SynthSpec late_divergence_spec(std::size_t flows, std::size_t k = 8) {
  SynthSpec spec;
  spec.n_flows = flows;
  spec.divergence_index = k;
  spec.shared_profile = {{200, 400}, {1000, 5000}, 0.5};
  FlowTemplate benign;
  benign.protocol = kProtoUdp;
  benign.close = CloseKind::none;
  benign.packets = {17, 24};
  benign.profile = spec.shared_profile;
  FlowTemplate attack = benign;
  attack.label = "DoS";
  attack.server_ips = {IpNetwork::parse(kAttackServer)};
  attack.profile.payload = {1000, 1200};
  attack.signal_packets = 1;
  spec.templates = {benign, attack};
  return spec;
}

// TCP flows whose classes differ from the SYN-ACK on: the handshake gap and
// every later packet size.
inline SynthSpec early_divergence_spec(std::size_t flows) {
  SynthSpec spec;
  spec.n_flows = flows;
  FlowTemplate benign;
  benign.packets = {12, 20};
  benign.profile = {{200, 400}, {1000, 5000}, 0.5};
  FlowTemplate attack = benign;
  attack.label = "DoS";
  attack.server_ips = {IpNetwork::parse(kAttackServer)};
  attack.profile = {{1000, 1200}, {20000, 30000}, 0.5};
  spec.templates = {benign, attack};
  return spec;
}

inline RuleSet attack_server_rules() {
  LabelRule r;
  r.label = "DoS";
  r.dst_ips = {IpNetwork::parse(kAttackServer)};
  return RuleSet{{r}};
}

struct Corpus {
  Dataset cf;
  std::map<Trigger, Dataset> pf;
};

inline Corpus meter_corpus(const SynthSpec& spec, std::uint64_t seed, std::set<std::int64_t> pc) {
  MeterConfig mc;
  mc.pc_triggers = std::move(pc);
  mc.fd_triggers_ms.clear();
  const auto out = meter(synth_trace(spec, seed).trace, mc);
  Corpus c;
  c.cf = build_cf(out.records, attack_server_rules());
  for (auto t : mc.all_triggers()) c.pf[t] = build_pf(out.snapshots, c.cf, t);
  return c;
}

}  // namespace pflow::testing
