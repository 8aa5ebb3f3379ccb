// pflow: preprocess, meter, evaluate and synthesize packet traces.
//
// Exit codes: 0 ok, 2 input or configuration error, 3 every result cell skipped.

#include <glob.h>

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pflow/pflow.hpp"

namespace {

constexpr int kExitInput = 2;
constexpr int kExitEmpty = 3;

struct EmptyResult : std::runtime_error {
  using std::runtime_error::runtime_error;
};

pflow::PipelineConfig base_config(const std::string& path) {
  return path.empty() ? pflow::PipelineConfig{} : pflow::load_pipeline_config(path);
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw pflow::UnreadableFile("glob failed: " + pattern);
  return out;
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string in, out, config;
  std::int64_t window_us = pflow::kDefaultDedupWindowUs;
};

void run_preprocess(const PreprocessArgs& a, const CLI::Option* window_opt) {
  auto cfg = base_config(a.config);
  if (window_opt->count()) cfg.dedup_window_us = a.window_us;
  if (cfg.dedup_window_us < 0) throw pflow::InvalidConfig("--dedup-window-us must be non-negative");

  const auto trace = pflow::pcap::read_trace(a.in);
  const auto deduped = pflow::dedup(trace, cfg.dedup_window_us);
  const auto reordered = pflow::count_out_of_order(deduped);
  pflow::pcap::write_trace(pflow::reorder(deduped), a.out);
  std::cout << "read: " << trace.packets.size() << '\n'
            << "skipped: " << trace.skipped << '\n'
            << "dropped: " << trace.packets.size() - deduped.packets.size() << '\n'
            << "reordered: " << reordered << '\n'
            << "written: " << deduped.packets.size() << '\n';
}

struct MeterArgs {
  std::string in, rules, out_dir, config;
};

void run_meter(const MeterArgs& a) {
  auto cfg = base_config(a.config);
  cfg.rules_path = a.rules;
  cfg.output_dir = a.out_dir;
  const auto rules = pflow::load_rules(a.rules);
  const auto trace = pflow::pcap::read_trace(a.in);
  const auto stage = pflow::run_meter_stage(trace, rules, cfg);
  pflow::write_meter_stage(stage, cfg, a.out_dir);

  std::cout << "packets: " << trace.packets.size() << '\n'
            << "flow records: " << stage.output.records.size() << '\n'
            << "snapshots: " << stage.output.snapshots.size() << '\n'
            << "CF flows: " << stage.cf.size() << '\n';
  for (const auto& [label, n] : stage.cf.class_counts()) std::cout << "  " << label << ": " << n << '\n';
  std::cout << '\n' << pflow::to_text(stage.audit);
}

struct EvalArgs {
  std::string cf, pf_glob, out_dir, config, task = "both", scenario = "all";
  std::uint64_t seed = 0;
  std::size_t trees = 0;
};

void run_eval(const EvalArgs& a, const CLI::Option* seed_opt, const CLI::Option* trees_opt) {
  auto cfg = base_config(a.config);
  if (seed_opt->count()) {
    cfg.split_seed = a.seed;
    cfg.train.seed = a.seed;
  }
  if (trees_opt->count()) cfg.train.n_trees = a.trees;
  cfg.train.validate();
  cfg.output_dir = a.out_dir;

  pflow::EvalOptions opts;
  if (a.task == "binary") opts.tasks = {pflow::Task::binary};
  else if (a.task == "multi") opts.tasks = {pflow::Task::multiclass};
  if (a.scenario != "all") {
    const auto s = pflow::parse_scenario(a.scenario);
    if (!s) throw pflow::InvalidConfig("unknown scenario " + a.scenario);
    opts.scenarios = {*s};
  }

  const auto cf = pflow::read_csv(a.cf, pflow::Provenance::cf());
  std::map<pflow::Trigger, pflow::Dataset> family;
  for (const auto& path : expand_glob(a.pf_glob)) {
    const auto expected = pflow::trigger_from_file_name(path);
    auto ds = pflow::read_csv(path, expected ? std::optional(pflow::Provenance::of(*expected)) : std::nullopt);
    if (ds.provenance.is_cf()) {
      std::cerr << "warning: " << path << " has no partial-flow provenance; ignored\n";
      continue;
    }
    const auto t = *ds.provenance.trigger;
    if (family.contains(t)) throw pflow::InvalidConfig("two files for " + t.to_string());
    family.emplace(t, std::move(ds));
  }
  if (family.empty()) throw pflow::UnreadableFile("no partial-flow CSV matches " + a.pf_glob);

  const auto report = pflow::run_eval_stage(cf, family, cfg, opts);
  std::filesystem::create_directories(a.out_dir);
  pflow::write_file_atomic(join(a.out_dir, "results.csv"), pflow::results_csv(report));
  const auto text = pflow::results_text(report);
  pflow::write_file_atomic(join(a.out_dir, "summary.txt"),
                           text + "\nconfig:\n" + pflow::to_json(cfg).dump(2) + "\n");
  pflow::write_file_atomic(join(a.out_dir, "config.json"), pflow::to_json(cfg).dump(2) + "\n");
  std::cout << text;
  if (report.computed() == 0) throw EmptyResult("every evaluation cell was skipped");
}

struct SynthArgs {
  std::string spec, out_pcap, truth;
  std::uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(pflow::read_file(a.spec));
  } catch (const nlohmann::json::exception& e) {
    throw pflow::InvalidSpec(a.spec + ": " + e.what());
  }
  const auto result = pflow::synth_trace(pflow::synth_spec_from_json(j), a.seed);
  pflow::pcap::write_trace(result.trace, a.out_pcap);
  pflow::write_file_atomic(a.truth, pflow::to_json(result.truth).dump(2) + "\n");
  std::cout << "flows: " << result.truth.size() << '\n' << "packets: " << result.trace.packets.size() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complete- and partial-flow metering and evaluation toolkit"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Drop duplicate packets and sort a pcap by timestamp");
  p->add_option("in", pre.in, "Input pcap")->required();
  p->add_option("out", pre.out, "Output pcap")->required();
  auto* window_opt = p->add_option("--dedup-window-us", pre.window_us,
                                   "Duplicates closer than this many microseconds are dropped (default 10000)");
  p->add_option("--config", pre.config, "PipelineConfig JSON supplying defaults");

  MeterArgs met;
  auto* m = app.add_subcommand("meter", "Meter a sorted pcap into labeled CF and PF datasets");
  m->add_option("in", met.in, "Input pcap, sorted by timestamp")->required();
  m->add_option("rules", met.rules, "Labeling rules JSON")->required();
  m->add_option("out_dir", met.out_dir, "Output directory")->required();
  m->add_option("--config", met.config, "PipelineConfig JSON (meter timeouts, triggers, min_class_count)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Run the CF/PF scenario sweep and write results.csv");
  e->add_option("cf", ev.cf, "Complete-flow CSV")->required();
  e->add_option("pf_glob", ev.pf_glob, "Glob matching partial-flow CSVs, e.g. 'out/pf_*.csv'")->required();
  e->add_option("out_dir", ev.out_dir, "Output directory")->required();
  e->add_option("--task", ev.task, "binary, multi or both")
      ->check(CLI::IsMember({"binary", "multi", "both"}))
      ->capture_default_str();
  e->add_option("--scenario", ev.scenario, "all, CF_CF, PF_PF or CF_PF")
      ->check(CLI::IsMember({"all", "CF_CF", "PF_PF", "CF_PF"}))
      ->capture_default_str();
  auto* seed_opt = e->add_option("--seed", ev.seed, "Seed for the train/test split and the forest");
  auto* trees_opt = e->add_option("--trees", ev.trees, "Number of trees (default from config, else 100)");
  e->add_option("--config", ev.config, "PipelineConfig JSON (split, train)");

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "Generate a synthetic pcap and its ground truth");
  s->add_option("spec", syn.spec, "Synthesis spec JSON")->required();
  s->add_option("seed", syn.seed, "Generator seed")->required();
  s->add_option("out_pcap", syn.out_pcap, "Output pcap")->required();
  s->add_option("truth", syn.truth, "Output ground-truth JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*p) run_preprocess(pre, window_opt);
    else if (*m) run_meter(met);
    else if (*e) run_eval(ev, seed_opt, trees_opt);
    else if (*s) run_synth(syn);
  } catch (const EmptyResult& err) {
    std::cerr << "pflow: " << err.what() << '\n';
    return kExitEmpty;
  } catch (const std::exception& err) {
    std::cerr << "pflow: " << err.what() << '\n';
    if (dynamic_cast<const pflow::UnsortedTrace*>(&err)) {
      std::cerr << "hint: run 'pflow preprocess' first\n";
    }
    return kExitInput;
  }
  return 0;
}
