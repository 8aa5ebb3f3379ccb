#pragma once

// Train/test scenarios over complete and partial flows: stratified key-level
// splits, metric conventions and threshold sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "pflow/dataset.hpp"
#include "pflow/error.hpp"
#include "pflow/forest.hpp"
#include "pflow/rng.hpp"

namespace pflow {

inline const std::string kAnomalyLabel = "ANOMALY";

struct Split {
  std::unordered_set<std::uint64_t> train_keys;
  std::unordered_set<std::uint64_t> test_keys;
  double ratio = 0.7;
  std::uint64_t seed = 0;
  // Labels with fewer than two flows; placed wholly in train.
  std::vector<std::string> degenerate_labels;
};

// Stratified per label: each label's distinct keys are sorted, shuffled with a
// label-specific stream and cut at round(ratio * n), clamped to [1, n-1].
inline Split split_keys(const Dataset& cf, double ratio = 0.7, std::uint64_t seed = 0) {
  if (!(ratio > 0 && ratio < 1)) throw InvalidConfig("split ratio must lie in (0, 1)");
  std::map<std::string, std::vector<std::uint64_t>> by_label;
  std::unordered_set<std::uint64_t> assigned;
  for (const auto& f : cf.flows) {
    if (assigned.insert(f.flow_hash).second) by_label[f.label].push_back(f.flow_hash);
  }
  Split s;
  s.ratio = ratio;
  s.seed = seed;
  for (auto& [label, keys] : by_label) {
    std::sort(keys.begin(), keys.end());
    const std::size_t n = keys.size();
    if (n < 2) {
      s.degenerate_labels.push_back(label);
      s.train_keys.insert(keys.begin(), keys.end());
      continue;
    }
    Rng rng(derive_seed(seed, fnv1a(label)));
    rng.shuffle(keys);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    s.train_keys.insert(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test_keys.insert(keys.begin() + static_cast<std::ptrdiff_t>(n_train), keys.end());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Metrics

enum class Task : std::uint8_t { binary, multiclass };

inline std::string_view to_string(Task t) { return t == Task::binary ? "binary" : "multiclass"; }

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::uint64_t support = 0;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct Metrics {
  Task task = Task::binary;
  std::map<std::string, ClassMetrics> per_class;
  double precision = 0;  // anomaly class (binary) or macro average (multiclass)
  double recall = 0;
  double f1 = 0;
  std::vector<std::string> labels;               // confusion matrix axes, sorted
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][pred]

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

// BENIGN/ANOMALY mapping. With a non-empty anomaly set, exactly its members
// are anomalous; otherwise everything except `benign_label` is.
inline const std::string& binary_label(const std::string& label,
                                       const std::set<std::string>& anomaly_labels = {},
                                       const std::string& benign_label = kBenignLabel) {
  const bool anomalous =
      anomaly_labels.empty() ? label != benign_label : anomaly_labels.contains(label);
  return anomalous ? kAnomalyLabel : kBenignLabel;
}

inline double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline Metrics compute_metrics(const std::vector<std::string>& y_true,
                               const std::vector<std::string>& y_pred, Task task,
                               const std::set<std::string>& anomaly_labels = {}) {
  if (y_true.size() != y_pred.size()) {
    throw LengthMismatch(std::to_string(y_true.size()) + " true vs " +
                         std::to_string(y_pred.size()) + " predicted labels");
  }
  if (y_true.empty()) throw EmptyInput("no labels to score");

  std::vector<std::string> truth, pred;
  if (task == Task::binary) {
    for (const auto& l : y_true) truth.push_back(binary_label(l, anomaly_labels));
    for (const auto& l : y_pred) pred.push_back(binary_label(l, anomaly_labels));
  } else {
    truth = y_true;
    pred = y_pred;
  }

  Metrics m;
  m.task = task;
  std::set<std::string> axis(truth.begin(), truth.end());
  axis.insert(pred.begin(), pred.end());
  if (task == Task::binary) axis.insert({kBenignLabel, kAnomalyLabel});
  m.labels.assign(axis.begin(), axis.end());
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < m.labels.size(); ++i) pos[m.labels[i]] = i;
  m.confusion.assign(m.labels.size(), std::vector<std::uint64_t>(m.labels.size(), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) ++m.confusion[pos[truth[i]]][pos[pred[i]]];

  auto score = [&](const std::string& label) {
    const std::size_t k = pos.at(label);
    std::uint64_t tp = m.confusion[k][k], row = 0, col = 0;
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      row += m.confusion[k][j];
      col += m.confusion[j][k];
    }
    ClassMetrics c;
    c.support = row;
    c.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    c.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    c.f1 = f1_of(c.precision, c.recall);
    return c;
  };

  if (task == Task::binary) {
    m.per_class[kBenignLabel] = score(kBenignLabel);
    m.per_class[kAnomalyLabel] = score(kAnomalyLabel);
    const auto& a = m.per_class[kAnomalyLabel];
    m.precision = a.precision;
    m.recall = a.recall;
    m.f1 = a.f1;
  } else {
    const std::set<std::string> present(truth.begin(), truth.end());
    for (const auto& label : present) {
      const auto c = score(label);
      m.per_class[label] = c;
      m.precision += c.precision;
      m.recall += c.recall;
      m.f1 += c.f1;
    }
    const auto n = static_cast<double>(present.size());
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scenarios

enum class ScenarioKind : std::uint8_t { cf_cf, pf_pf, cf_pf };

inline std::string_view to_string(ScenarioKind s) {
  switch (s) {
    case ScenarioKind::cf_cf: return "CF_CF";
    case ScenarioKind::pf_pf: return "PF_PF";
    case ScenarioKind::cf_pf: return "CF_PF";
  }
  return "?";
}

inline std::optional<ScenarioKind> parse_scenario(std::string_view s) {
  if (s == "CF_CF") return ScenarioKind::cf_cf;
  if (s == "PF_PF") return ScenarioKind::pf_pf;
  if (s == "CF_PF") return ScenarioKind::cf_pf;
  return std::nullopt;
}

inline constexpr ScenarioKind kAllScenarios[] = {ScenarioKind::cf_cf, ScenarioKind::pf_pf,
                                                 ScenarioKind::cf_pf};

struct Scenario {
  ScenarioKind kind = ScenarioKind::cf_cf;
  Task task = Task::binary;
  std::optional<Trigger> threshold;  // absent for CF_CF
};

struct ScenarioResult {
  Metrics metrics;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

namespace detail {

inline Dataset restrict(const Dataset& ds, const std::unordered_set<std::uint64_t>& keys,
                        Task task, const std::string& benign_label) {
  Dataset out;
  out.provenance = ds.provenance;
  out.feature_schema = ds.feature_schema;
  for (const auto& f : ds.flows) {
    if (!keys.contains(f.flow_hash)) continue;
    out.flows.push_back(f);
    if (task == Task::binary) out.flows.back().label = binary_label(f.label, {}, benign_label);
  }
  return out;
}

}  // namespace detail

inline ScenarioResult run_scenario(const Scenario& scenario, const Dataset& cf,
                                   const Dataset* pf, const Split& split, const TrainConfig& tc,
                                   const std::string& benign_label = kBenignLabel) {
  if ((scenario.kind == ScenarioKind::cf_cf) != (pf == nullptr)) {
    throw InvalidConfig("a partial-flow dataset is required iff the scenario is not CF_CF");
  }
  if (pf && cf.keys() != pf->keys()) throw InvalidConfig("CF and PF datasets are not aligned");

  const Dataset& train_src = scenario.kind == ScenarioKind::pf_pf ? *pf : cf;
  const Dataset& test_src = scenario.kind == ScenarioKind::cf_cf ? cf : *pf;
  const auto train_set = detail::restrict(train_src, split.train_keys, scenario.task, benign_label);
  const auto test_set = detail::restrict(test_src, split.test_keys, scenario.task, benign_label);
  if (train_set.empty() || test_set.empty()) {
    throw EmptySide(std::string(to_string(scenario.kind)) + ": " +
                    std::to_string(train_set.size()) + " train / " +
                    std::to_string(test_set.size()) + " test flows");
  }

  const auto forest = train(train_set, tc);
  std::vector<std::string> truth, pred;
  truth.reserve(test_set.size());
  pred.reserve(test_set.size());
  for (const auto& f : test_set.flows) {
    truth.push_back(f.label);
    pred.push_back(forest.predict(f.features));
  }
  ScenarioResult r;
  r.metrics = compute_metrics(truth, pred, scenario.task,
                              scenario.task == Task::binary ? std::set<std::string>{kAnomalyLabel}
                                                            : std::set<std::string>{});
  r.n_train = train_set.size();
  r.n_test = test_set.size();
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  Trigger threshold;
  ScenarioKind scenario = ScenarioKind::cf_cf;
  Task task = Task::binary;
  std::optional<Metrics> metrics;  // empty when skipped
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::string skipped_reason;

  bool skipped() const { return !metrics.has_value(); }
};

struct SweepReport {
  std::vector<SweepRow> rows;  // ordered by (threshold, scenario, task)

  std::size_t computed() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.skipped(); }));
  }

  const SweepRow* find(Trigger t, ScenarioKind s, Task task) const {
    for (const auto& r : rows) {
      if (r.threshold == t && r.scenario == s && r.task == task) return &r;
    }
    return nullptr;
  }
};

struct SweepOptions {
  std::vector<Task> tasks = {Task::binary, Task::multiclass};
  std::vector<ScenarioKind> scenarios = {ScenarioKind::cf_cf, ScenarioKind::pf_pf,
                                         ScenarioKind::cf_pf};
  std::string benign_label = kBenignLabel;
};

// Runs every (threshold, scenario, task) cell. CF is aligned to each PF
// dataset first, so CF_CF rows use the same flows as the partial scenarios.
// Cell failures are recorded on the row; the sweep itself never throws them.
inline SweepReport sweep(const Dataset& cf, const std::map<Trigger, Dataset>& pf_family,
                         const Split& split, const TrainConfig& tc,
                         const SweepOptions& options = {}) {
  std::vector<ScenarioKind> scenarios = options.scenarios;
  std::sort(scenarios.begin(), scenarios.end());
  std::vector<Task> tasks = options.tasks;
  std::sort(tasks.begin(), tasks.end());

  SweepReport report;
  for (const auto& [threshold, pf] : pf_family) {
    std::optional<std::pair<Dataset, Dataset>> aligned;
    std::string align_error;
    try {
      aligned = align(cf, pf);
    } catch (const std::exception& e) {
      align_error = e.what();
    }
    for (auto kind : scenarios) {
      for (auto task : tasks) {
        SweepRow row;
        row.threshold = threshold;
        row.scenario = kind;
        row.task = task;
        if (!aligned) {
          row.skipped_reason = align_error;
          report.rows.push_back(std::move(row));
          continue;
        }
        try {
          const Scenario sc{kind, task, kind == ScenarioKind::cf_cf ? std::nullopt
                                                                    : std::optional(threshold)};
          auto r = run_scenario(sc, aligned->first,
                                kind == ScenarioKind::cf_cf ? nullptr : &aligned->second, split, tc,
                                options.benign_label);
          row.metrics = std::move(r.metrics);
          row.n_train = r.n_train;
          row.n_test = r.n_test;
        } catch (const std::exception& e) {
          row.skipped_reason = e.what();
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

namespace detail {

inline std::string csv_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline std::string results_csv(const SweepReport& report) {
  std::string out = "threshold,scenario,task,precision,recall,f1,n_train,n_test,skipped_reason\n";
  for (const auto& r : report.rows) {
    out += r.threshold.to_string();
    out += ',';
    out += to_string(r.scenario);
    out += ',';
    out += to_string(r.task);
    out += ',';
    if (r.metrics) {
      out += detail::csv_real(r.metrics->precision) + ',' + detail::csv_real(r.metrics->recall) +
             ',' + detail::csv_real(r.metrics->f1) + ',';
    } else {
      out += ",,,";
    }
    out += std::to_string(r.n_train) + ',' + std::to_string(r.n_test) + ',';
    detail::append_csv_field(out, r.skipped_reason);
    out += '\n';
  }
  return out;
}

inline std::string results_text(const SweepReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-6s %-10s %9s %9s %9s %8s %8s  %s\n", "threshold",
                "scen.", "task", "precision", "recall", "f1", "train", "test", "note");
  os << line;
  for (const auto& r : report.rows) {
    if (r.metrics) {
      std::snprintf(line, sizeof(line), "%-10s %-6s %-10s %9.4f %9.4f %9.4f %8zu %8zu\n",
                    r.threshold.to_string().c_str(), std::string(to_string(r.scenario)).c_str(),
                    std::string(to_string(r.task)).c_str(), r.metrics->precision,
                    r.metrics->recall, r.metrics->f1, r.n_train, r.n_test);
    } else {
      std::snprintf(line, sizeof(line), "%-10s %-6s %-10s %9s %9s %9s %8s %8s  skipped: %s\n",
                    r.threshold.to_string().c_str(), std::string(to_string(r.scenario)).c_str(),
                    std::string(to_string(r.task)).c_str(), "-", "-", "-", "-", "-",
                    r.skipped_reason.c_str());
    }
    os << line;
  }
  return os.str();
}

}  // namespace pflow
