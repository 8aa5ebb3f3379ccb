#pragma once

// File-level pipeline stages shared by the command-line tool: configuration,
// metering a trace into CF/PF CSVs and sweeping them into a results table.

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "pflow/dataset.hpp"
#include "pflow/eval.hpp"
#include "pflow/forest.hpp"
#include "pflow/io.hpp"
#include "pflow/labeling.hpp"
#include "pflow/meter.hpp"
#include "pflow/preprocess.hpp"

namespace pflow {

inline nlohmann::json to_json(const MeterConfig& c) {
  return {{"idle_timeout_s", c.idle_timeout_s},
          {"active_timeout_s", c.active_timeout_s},
          {"fin_rst_expiration", c.fin_rst_expiration},
          {"pc_triggers", c.pc_triggers},
          {"fd_triggers_ms", c.fd_triggers_ms},
          {"fd_tolerance", c.fd_tolerance},
          {"byte_triggers", c.byte_triggers}};
}

inline MeterConfig meter_config_from_json(const nlohmann::json& j, MeterConfig c = {}) {
  try {
    c.idle_timeout_s = j.value("idle_timeout_s", c.idle_timeout_s);
    c.active_timeout_s = j.value("active_timeout_s", c.active_timeout_s);
    c.fin_rst_expiration = j.value("fin_rst_expiration", c.fin_rst_expiration);
    c.pc_triggers = j.value("pc_triggers", c.pc_triggers);
    c.fd_triggers_ms = j.value("fd_triggers_ms", c.fd_triggers_ms);
    c.fd_tolerance = j.value("fd_tolerance", c.fd_tolerance);
    c.byte_triggers = j.value("byte_triggers", c.byte_triggers);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("meter config: ") + e.what());
  }
  c.validate();
  return c;
}

struct PipelineConfig {
  MeterConfig meter;
  std::string rules_path;
  std::int64_t dedup_window_us = kDefaultDedupWindowUs;
  std::size_t min_class_count = kDefaultMinClassCount;
  double split_ratio = 0.7;
  std::uint64_t split_seed = 0;
  TrainConfig train;
  std::string output_dir;
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"meter", to_json(c.meter)},
          {"rules_path", c.rules_path},
          {"dedup_window_us", c.dedup_window_us},
          {"min_class_count", c.min_class_count},
          {"split", {{"ratio", c.split_ratio}, {"seed", c.split_seed}}},
          {"train", to_json(c.train)},
          {"output_dir", c.output_dir}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfig("pipeline config must be a JSON object");
  PipelineConfig c;
  try {
    if (j.contains("meter")) c.meter = meter_config_from_json(j["meter"]);
    c.rules_path = j.value("rules_path", c.rules_path);
    c.dedup_window_us = j.value("dedup_window_us", c.dedup_window_us);
    c.min_class_count = j.value("min_class_count", c.min_class_count);
    if (j.contains("split")) {
      c.split_ratio = j["split"].value("ratio", c.split_ratio);
      c.split_seed = j["split"].value("seed", c.split_seed);
    }
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("pipeline config: ") + e.what());
  }
  if (c.dedup_window_us < 0) throw InvalidConfig("dedup_window_us must be non-negative");
  if (!(c.split_ratio > 0 && c.split_ratio < 1)) throw InvalidConfig("split.ratio must lie in (0, 1)");
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

// pf_pc_12.csv, pf_fd_150.csv, pf_bt_500.csv
inline std::string pf_file_name(Trigger t) {
  const char* kind = t.kind == Trigger::Kind::packet_count ? "pc"
                     : t.kind == Trigger::Kind::duration   ? "fd"
                                                           : "bt";
  return std::string("pf_") + kind + "_" + std::to_string(t.value) + ".csv";
}

inline std::optional<Trigger> trigger_from_file_name(const std::string& path) {
  static const std::regex re(R"(pf_(pc|fd|bt)_([0-9]+)\.csv$)");
  std::smatch m;
  const auto name = std::filesystem::path(path).filename().string();
  if (!std::regex_search(name, m, re)) return std::nullopt;
  const auto kind = m[1].str();
  const std::string prefix = kind == "pc" ? "PC=" : kind == "fd" ? "FD=" : "BT=";
  return Trigger::parse(prefix + m[2].str());
}

struct MeterStage {
  MeterOutput output;
  Dataset cf;
  std::map<Trigger, Dataset> pf;
  AuditReport audit;
};

inline MeterStage run_meter_stage(const PacketTrace& trace, const RuleSet& rules,
                                  const PipelineConfig& config) {
  MeterStage s;
  s.output = meter(trace, config.meter);
  s.audit = audit(s.output.records, rules, config.meter.idle_timeout_s);
  s.cf = build_cf(s.output.records, rules, config.min_class_count);
  for (auto t : config.meter.all_triggers()) s.pf[t] = build_pf(s.output.snapshots, s.cf, t);
  return s;
}

// Writes cf.csv, one PF CSV per trigger, audit.json, distribution.json and
// config.json into `dir`.
inline void write_meter_stage(const MeterStage& s, const PipelineConfig& config,
                              const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto path = [&](const std::string& name) { return (std::filesystem::path(dir) / name).string(); };
  const auto echo = to_json(config);
  write_csv(s.cf, path("cf.csv"));
  nlohmann::json dist = nlohmann::json::object();
  dist["CF"] = to_json(distribution(s.cf));
  for (const auto& [t, ds] : s.pf) {
    write_csv(ds, path(pf_file_name(t)));
    dist[t.to_string()] = to_json(distribution(ds));
  }
  auto audit_json = to_json(s.audit);
  audit_json["config"] = echo;
  write_file_atomic(path("audit.json"), audit_json.dump(2) + "\n");
  write_file_atomic(path("distribution.json"),
                    nlohmann::json{{"datasets", dist}, {"config", echo}}.dump(2) + "\n");
  write_file_atomic(path("config.json"), echo.dump(2) + "\n");
}

struct EvalOptions {
  std::vector<Task> tasks = {Task::binary, Task::multiclass};
  std::vector<ScenarioKind> scenarios = {ScenarioKind::cf_cf, ScenarioKind::pf_pf, ScenarioKind::cf_pf};
};

inline SweepReport run_eval_stage(const Dataset& cf, const std::map<Trigger, Dataset>& pf,
                                  const PipelineConfig& config, const EvalOptions& options = {}) {
  const auto split = split_keys(cf, config.split_ratio, config.split_seed);
  SweepOptions so;
  so.tasks = options.tasks;
  so.scenarios = options.scenarios;
  return sweep(cf, pf, split, config.train, so);
}

}  // namespace pflow
