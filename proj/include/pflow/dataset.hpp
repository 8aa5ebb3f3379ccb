#pragma once

// Labeled complete-flow (CF) and partial-flow (PF) datasets: construction,
// CF/PF alignment, trace audits, distribution summaries and CSV persistence.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "pflow/error.hpp"
#include "pflow/flow.hpp"
#include "pflow/io.hpp"
#include "pflow/labeling.hpp"
#include "pflow/meter.hpp"

namespace pflow {

// A flow's identity downstream of metering is its six-tuple hash.
struct LabeledFlow {
  std::uint64_t flow_hash = 0;
  FeatureVector features;
  std::string label;

  friend bool operator==(const LabeledFlow&, const LabeledFlow&) = default;
};

inline std::vector<std::string> default_feature_schema() {
  const auto& names = feature_names();
  return {names.begin(), names.end()};
}

struct Dataset {
  Provenance provenance;
  std::vector<LabeledFlow> flows;
  std::vector<std::string> feature_schema = default_feature_schema();

  std::size_t size() const { return flows.size(); }
  bool empty() const { return flows.empty(); }

  std::unordered_set<std::uint64_t> keys() const {
    std::unordered_set<std::uint64_t> k;
    k.reserve(flows.size());
    for (const auto& f : flows) k.insert(f.flow_hash);
    return k;
  }

  std::map<std::string, std::size_t> class_counts() const {
    std::map<std::string, std::size_t> c;
    for (const auto& f : flows) ++c[f.label];
    return c;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::size_t kDefaultMinClassCount = 50;

// Labels records, then drops zero-payload flows, repeated flow hashes (the
// earliest record wins) and classes with fewer than min_class_count flows.
inline Dataset build_cf(const std::vector<FlowRecord>& records, const RuleSet& rules,
                        std::size_t min_class_count = kDefaultMinClassCount) {
  std::vector<LabeledFlow> kept;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& r : records) {
    if (r.features.payload_bytes() == 0) continue;
    if (!seen.insert(r.id.hash64).second) continue;
    kept.push_back({r.id.hash64, r.features, label_flow(r, rules)});
  }
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& f : kept) ++counts[f.label];

  Dataset ds;
  ds.provenance = Provenance::cf();
  for (auto& f : kept) {
    if (counts[f.label] >= min_class_count) ds.flows.push_back(std::move(f));
  }
  return ds;
}

// Snapshots with `trigger` whose parent survived into `cf`; each inherits the
// parent's label. At most one snapshot per parent.
inline Dataset build_pf(const std::vector<FlowSnapshot>& snapshots, const Dataset& cf,
                        Trigger trigger) {
  if (!cf.provenance.is_cf()) throw InvalidConfig("build_pf needs a CF dataset");
  std::unordered_map<std::uint64_t, const std::string*> parent_label;
  parent_label.reserve(cf.flows.size());
  for (const auto& f : cf.flows) parent_label.emplace(f.flow_hash, &f.label);

  Dataset ds;
  ds.provenance = Provenance::of(trigger);
  ds.feature_schema = cf.feature_schema;
  std::unordered_set<std::uint64_t> taken;
  for (const auto& s : snapshots) {
    if (s.trigger != trigger) continue;
    auto it = parent_label.find(s.parent_id.hash64);
    if (it == parent_label.end()) continue;
    if (!taken.insert(s.parent_id.hash64).second) continue;
    ds.flows.push_back({s.parent_id.hash64, s.features, *it->second});
  }
  return ds;
}

// Restricts `cf` to the flow hashes present in `pf`.
inline std::pair<Dataset, Dataset> align(const Dataset& cf, const Dataset& pf) {
  if (!cf.provenance.is_cf()) throw InvalidConfig("align needs a CF dataset as first argument");
  const auto pf_keys = pf.keys();
  Dataset out;
  out.provenance = cf.provenance;
  out.feature_schema = cf.feature_schema;
  for (const auto& f : cf.flows) {
    if (pf_keys.contains(f.flow_hash)) out.flows.push_back(f);
  }
  return {std::move(out), pf};
}

// ---------------------------------------------------------------------------
// Audit

struct LabelSplitCount {
  std::uint64_t benign = 0;
  std::uint64_t attack = 0;
  std::uint64_t total = 0;

  friend bool operator==(const LabelSplitCount&, const LabelSplitCount&) = default;
};

struct AuditReport {
  std::uint64_t records = 0;
  std::map<std::string, std::uint64_t> zpl_by_label;
  std::map<std::string, std::uint64_t> payload_by_label;
  LabelSplitCount fin_over_two;
  LabelSplitCount rst_over_two;
  std::uint64_t piat_near_idle = 0;       // max PIAT in [0.8 idle, idle)
  std::uint64_t repeated_key_groups = 0;  // five-tuples split into >1 record

  friend bool operator==(const AuditReport&, const AuditReport&) = default;
};

inline AuditReport audit(const std::vector<FlowRecord>& records, const RuleSet& rules,
                         double idle_timeout_s) {
  AuditReport rep;
  rep.records = records.size();
  const double idle_ms = idle_timeout_s * 1000.0;
  std::unordered_map<FlowKey, std::uint64_t, FlowKeyHash> per_key;
  for (const auto& r : records) {
    const auto& label = label_flow(r, rules);
    const bool benign = label == rules.default_label;
    if (r.features.payload_bytes() == 0) ++rep.zpl_by_label[label];
    else ++rep.payload_by_label[label];

    auto tally = [benign](LabelSplitCount& c) {
      ++(benign ? c.benign : c.attack);
      ++c.total;
    };
    if (r.features[flag_index(0)] > 2) tally(rep.fin_over_two);
    if (r.features[flag_index(2)] > 2) tally(rep.rst_over_two);

    const double max_piat = r.features.get(Scope::bidirectional, ScopeFeature::max_piat_ms);
    if (r.features.packets() >= 2 && max_piat >= 0.8 * idle_ms && max_piat < idle_ms) {
      ++rep.piat_near_idle;
    }
    ++per_key[r.id.key];
  }
  for (const auto& [key, n] : per_key) {
    if (n > 1) ++rep.repeated_key_groups;
  }
  return rep;
}

inline nlohmann::json to_json(const AuditReport& r) {
  auto split = [](const LabelSplitCount& c) {
    return nlohmann::json{{"benign", c.benign}, {"attack", c.attack}, {"total", c.total}};
  };
  return {{"records", r.records},
          {"zpl_by_label", r.zpl_by_label},
          {"payload_by_label", r.payload_by_label},
          {"fin_over_two", split(r.fin_over_two)},
          {"rst_over_two", split(r.rst_over_two)},
          {"piat_near_idle", r.piat_near_idle},
          {"repeated_key_groups", r.repeated_key_groups}};
}

inline std::string to_text(const AuditReport& r) {
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> rows;
  for (const auto& [l, n] : r.zpl_by_label) rows[l].first = n;
  for (const auto& [l, n] : r.payload_by_label) rows[l].second = n;
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-28s %12s %12s\n", "label", "zpl", "payload>0");
  os << line;
  for (const auto& [l, c] : rows) {
    std::snprintf(line, sizeof(line), "%-28s %12llu %12llu\n", l.c_str(),
                  static_cast<unsigned long long>(c.first),
                  static_cast<unsigned long long>(c.second));
    os << line;
  }
  os << '\n';
  std::snprintf(line, sizeof(line), "%-28s %12s %12s %12s\n", "flag", "benign", "attack", "total");
  os << line;
  auto flag_row = [&](const char* name, const LabelSplitCount& c) {
    std::snprintf(line, sizeof(line), "%-28s %12llu %12llu %12llu\n", name,
                  static_cast<unsigned long long>(c.benign),
                  static_cast<unsigned long long>(c.attack),
                  static_cast<unsigned long long>(c.total));
    os << line;
  };
  flag_row("FIN > 2", r.fin_over_two);
  flag_row("RST > 2", r.rst_over_two);
  os << "\nrecords: " << r.records << "\nmax PIAT just below idle timeout: " << r.piat_near_idle
     << "\nrepeated five-tuple groups: " << r.repeated_key_groups << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Distribution

struct ClassDistribution {
  std::uint64_t count = 0;
  double min_duration_ms = 0, mean_duration_ms = 0, max_duration_ms = 0;
  double min_packets = 0, mean_packets = 0, max_packets = 0;

  friend bool operator==(const ClassDistribution&, const ClassDistribution&) = default;
};

struct DistributionSummary {
  Provenance provenance;
  std::map<std::string, ClassDistribution> per_label;
  ClassDistribution benign;
  ClassDistribution anomaly;
  ClassDistribution all;

  friend bool operator==(const DistributionSummary&, const DistributionSummary&) = default;
};

namespace detail {

struct DistAccumulator {
  std::uint64_t n = 0;
  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin, dsum = 0;
  double pmin = std::numeric_limits<double>::infinity(), pmax = -pmin, psum = 0;

  void add(const FeatureVector& v) {
    ++n;
    dmin = std::min(dmin, v.duration_ms());
    dmax = std::max(dmax, v.duration_ms());
    dsum += v.duration_ms();
    pmin = std::min(pmin, v.packets());
    pmax = std::max(pmax, v.packets());
    psum += v.packets();
  }

  ClassDistribution result() const {
    if (n == 0) return {};
    const auto dn = static_cast<double>(n);
    return {n, dmin, dsum / dn, dmax, pmin, psum / dn, pmax};
  }
};

}  // namespace detail

inline DistributionSummary distribution(const Dataset& ds,
                                        const std::string& benign_label = kBenignLabel) {
  std::map<std::string, detail::DistAccumulator> per;
  detail::DistAccumulator benign, anomaly, all;
  for (const auto& f : ds.flows) {
    per[f.label].add(f.features);
    (f.label == benign_label ? benign : anomaly).add(f.features);
    all.add(f.features);
  }
  DistributionSummary s;
  s.provenance = ds.provenance;
  for (const auto& [label, acc] : per) s.per_label[label] = acc.result();
  s.benign = benign.result();
  s.anomaly = anomaly.result();
  s.all = all.result();
  return s;
}

inline nlohmann::json to_json(const ClassDistribution& c) {
  return {{"count", c.count},
          {"min_duration_ms", c.min_duration_ms},
          {"mean_duration_ms", c.mean_duration_ms},
          {"max_duration_ms", c.max_duration_ms},
          {"min_packets", c.min_packets},
          {"mean_packets", c.mean_packets},
          {"max_packets", c.max_packets}};
}

inline nlohmann::json to_json(const DistributionSummary& s) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [label, c] : s.per_label) per[label] = to_json(c);
  return {{"provenance", s.provenance.to_string()},
          {"per_label", per},
          {"benign", to_json(s.benign)},
          {"anomaly", to_json(s.anomaly)},
          {"all", to_json(s.all)}};
}

inline std::string to_text(const DistributionSummary& s) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-24s %9s %12s %12s %12s %8s %9s %8s\n", "dataset",
                "class", "flows", "min dur ms", "mean dur ms", "max dur ms", "min pk",
                "mean pk", "max pk");
  os << line;
  auto row = [&](const std::string& name, const ClassDistribution& c) {
    std::snprintf(line, sizeof(line), "%-10s %-24s %9llu %12.2f %12.2f %12.2f %8.0f %9.2f %8.0f\n",
                  s.provenance.to_string().c_str(), name.c_str(),
                  static_cast<unsigned long long>(c.count), c.min_duration_ms,
                  c.mean_duration_ms, c.max_duration_ms, c.min_packets, c.mean_packets,
                  c.max_packets);
    os << line;
  };
  row("ALL", s.all);
  row("BENIGN", s.benign);
  row("ANOMALY", s.anomaly);
  for (const auto& [label, c] : s.per_label) row(label, c);
  return os.str();
}

// ---------------------------------------------------------------------------
// CSV: feature columns, then label, flow_hash, provenance.

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

inline void append_csv_field(std::string& out, std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
    out.append(s);
    return;
  }
  out.push_back('"');
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

// Splits one CSV record starting at `pos`; advances `pos` past the line end.
inline std::vector<std::string> next_csv_record(std::string_view text, std::size_t& pos) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  while (pos < text.size()) {
    const char c = text[pos++];
    if (quoted) {
      if (c == '"') {
        if (pos < text.size() && text[pos] == '"') {
          fields.back().push_back('"');
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      fields.back().push_back(c);
    }
  }
  return fields;
}

}  // namespace detail

inline std::string csv_header(const std::vector<std::string>& schema) {
  std::string out;
  for (const auto& name : schema) {
    out += name;
    out += ',';
  }
  out += "label,flow_hash,provenance\n";
  return out;
}

inline std::string to_csv(const Dataset& ds) {
  std::string out = csv_header(ds.feature_schema);
  const std::string prov = ds.provenance.to_string();
  for (const auto& f : ds.flows) {
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      detail::append_double(out, f.features[i]);
      out += ',';
    }
    detail::append_csv_field(out, f.label);
    out += ',';
    out += std::to_string(f.flow_hash);
    out += ',';
    out += prov;
    out += '\n';
  }
  return out;
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  write_file_atomic(path, to_csv(ds));
}

// Parses CSV produced by to_csv(). A header-only file has no provenance of
// its own; `expected` (or CF) is used then, and checked against rows otherwise.
inline Dataset parse_csv(std::string_view text, std::optional<Provenance> expected = {},
                         const std::string& origin = "<csv>") {
  Dataset ds;
  std::size_t pos = 0;
  if (text.empty()) throw SchemaMismatch(origin + ": missing header");
  const auto header = detail::next_csv_record(text, pos);
  const auto schema = default_feature_schema();
  std::vector<std::string> want(schema);
  want.insert(want.end(), {"label", "flow_hash", "provenance"});
  if (header != want) throw SchemaMismatch(origin + ": header does not match the feature schema");

  std::optional<Provenance> seen;
  std::size_t line = 1;
  while (pos < text.size()) {
    ++line;
    const auto fields = detail::next_csv_record(text, pos);
    if (fields.size() == 1 && fields[0].empty()) continue;
    const auto where = origin + ":" + std::to_string(line);
    if (fields.size() != want.size()) throw SchemaMismatch(where + ": wrong column count");
    LabeledFlow f;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const auto& s = fields[i];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), f.features[i]);
      if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw SchemaMismatch(where + ": bad number '" + s + "'");
      }
    }
    f.label = fields[kFeatureCount];
    if (f.label.empty()) throw SchemaMismatch(where + ": empty label");
    const auto& h = fields[kFeatureCount + 1];
    auto [ptr, ec] = std::from_chars(h.data(), h.data() + h.size(), f.flow_hash);
    if (ec != std::errc{} || ptr != h.data() + h.size()) {
      throw SchemaMismatch(where + ": bad flow_hash '" + h + "'");
    }
    const auto prov = Provenance::parse(fields[kFeatureCount + 2]);
    if (!prov) throw SchemaMismatch(where + ": bad provenance");
    if (seen && *seen != *prov) throw SchemaMismatch(where + ": mixed provenance");
    seen = prov;
    ds.flows.push_back(std::move(f));
  }
  if (seen && expected && *seen != *expected) {
    throw SchemaMismatch(origin + ": provenance " + seen->to_string() + ", expected " +
                         expected->to_string());
  }
  ds.provenance = seen ? *seen : expected.value_or(Provenance::cf());
  return ds;
}

inline Dataset read_csv(const std::string& path, std::optional<Provenance> expected = {}) {
  return parse_csv(read_file(path), expected, path);
}

}  // namespace pflow
