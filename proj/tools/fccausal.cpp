// Command-line front end. Global flags override the matching keys of the
// optional --config file; subcommand flags override both.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fccausal/benchmark.hpp"
#include "fccausal/clause_splitter.hpp"
#include "fccausal/dataset.hpp"
#include "fccausal/errors.hpp"
#include "fccausal/fc_harness.hpp"
#include "fccausal/intervention.hpp"
#include "fccausal/io_util.hpp"
#include "fccausal/metrics.hpp"
#include "fccausal/published.hpp"
#include "fccausal/reference_model.hpp"
#include "fccausal/report.hpp"
#include "fccausal/runner.hpp"
#include "fccausal/scm.hpp"

namespace fs = std::filesystem;
using namespace fccausal;

namespace {

struct Globals {
  std::optional<std::string> model;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
};

RunConfig effective_config(const Globals& g) {
  RunConfig c = g.config ? load_config(*g.config) : RunConfig{};
  if (g.model) c.model = *g.model;
  if (g.seed) c.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  if (g.out) c.out = *g.out;
  return c;
}

RuleSet rules_for(const RunConfig& c) {
  return c.rules.empty() ? default_rules() : load_rules(c.rules);
}

DecodeParams decode_for(const RunConfig& c) {
  DecodeParams d;
  d.temperature = c.temperature;
  d.max_new_tokens = c.max_new_tokens;
  d.seed = c.seed;
  return d;
}

std::vector<QueryRecord> load_records(const fs::path& path) {
  if (path.empty()) throw ConfigError("a dataset is required (--dataset or config key)");
  LoadResult r = load_dataset(path);
  for (const auto& d : r.diagnostics) {
    std::cerr << "warning: " << path.string() << ":" << d.line << ": " << d.message << "\n";
  }
  return std::move(r.records);
}

std::vector<ScanInput> scan_inputs(const std::vector<QueryRecord>& records) {
  std::vector<ScanInput> out;
  for (const auto& q : records) out.push_back({q.id, q.query});
  return out;
}

// Writes to a file under --out, or stdout when --out is absent.
void emit(const std::optional<std::string>& out_dir, const std::string& name,
          const std::string& body) {
  if (!out_dir) {
    std::cout << body;
    return;
  }
  fs::create_directories(*out_dir);
  write_file(fs::path(*out_dir) / name, body);
  std::cerr << "wrote " << (fs::path(*out_dir) / name).string() << "\n";
}

std::string describe(const std::exception& e) {
  std::string msg = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    msg += "\n  caused by: " + describe(inner);
  } catch (...) {
  }
  return msg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer and clause causal interventions and FC detection harness"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--model", g.model, "Model spec (reference, weights:<path>, stub:<name>, ...)");
  app.add_option("--config", g.config, "Flat key = value config file");
  app.add_option("--seed", g.seed, "Seed recorded in every output");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  std::string dataset, setting_name = "without", rules_path, position_name;
  std::optional<int> repeats;
  std::optional<double> temperature;
  std::optional<std::string> mask;
  bool dump_clauses = false;

  auto* layer_cmd = app.add_subcommand("layer-scan", "Per-layer causal effects over a dataset");
  layer_cmd->add_option("--dataset", dataset, "Dataset JSONL");
  layer_cmd->add_option("--setting", setting_name, "without | prompt | fc");
  layer_cmd->add_option("--rules", rules_path, "Rule file (JSON)");
  layer_cmd->add_option("--position", position_name, "final_input | first_generated");

  auto* clause_cmd = app.add_subcommand("clause-scan", "Per-clause causal effects");
  clause_cmd->add_option("--dataset", dataset, "Dataset JSONL");
  clause_cmd->add_option("--setting", setting_name, "without | prompt | fc");
  clause_cmd->add_option("--rules", rules_path, "Rule file (JSON)");
  clause_cmd->add_option("--repeats", repeats, "Paired inferences per clause");
  clause_cmd->add_option("--temperature", temperature, "Decode temperature");
  clause_cmd->add_option("--mask", mask, "Replacement text for a masked clause");
  clause_cmd->add_option("--position", position_name, "final_input | first_generated");
  clause_cmd->add_flag("--dump-clauses", dump_clauses, "Print the clause split and exit");

  scm::LinearScm scm_params;
  std::size_t scm_n = 100000;
  double x1 = 1.0, x0 = 0.0;
  std::string scm_csv;
  bool crn = false;
  auto* scm_cmd = app.add_subcommand("scm-demo", "Confounded linear SCM: correlation vs do()");
  scm_cmd->add_option("--n", scm_n, "Samples per estimate")->check(CLI::PositiveNumber);
  scm_cmd->add_option("--b1", scm_params.b1, "Z -> X coefficient");
  scm_cmd->add_option("--b2", scm_params.b2, "Z -> Y coefficient");
  scm_cmd->add_option("--direct", scm_params.direct_effect, "X -> Y coefficient");
  scm_cmd->add_option("--x1", x1, "Treatment value");
  scm_cmd->add_option("--x0", x0, "Control value");
  scm_cmd->add_option("--csv", scm_csv, "Dump observational samples to this CSV");
  scm_cmd->add_flag("--common-random-numbers", crn, "Replay the same noise in both arms");

  std::size_t k = 0;
  bool selective = false;
  auto* sample_cmd = app.add_subcommand("sample", "Draw the analysis sample from a dataset");
  sample_cmd->add_option("--dataset", dataset, "Dataset JSONL");
  sample_cmd->add_option("--rules", rules_path, "Rule file (JSON)");
  sample_cmd->add_option("--k", k, "Sample size (default: config sample_size)");
  sample_cmd->add_flag("--selective", selective, "Keep FC-detected, prompt-missed inputs only");

  std::vector<std::string> setting_names;
  bool published_only = false;
  auto* compare_cmd = app.add_subcommand("compare", "Detection rate per setting");
  compare_cmd->add_option("--dataset", dataset, "Dataset JSONL");
  compare_cmd->add_option("--rules", rules_path, "Rule file (JSON)");
  compare_cmd->add_option("--settings", setting_names, "Settings to compare")->delimiter(',');
  compare_cmd->add_flag("--published", published_only,
                        "Only print the improvement ratio of the published rates");

  std::vector<std::string> run_dirs;
  auto* report_cmd = app.add_subcommand("report", "Tables and plot data from run directories");
  report_cmd->add_option("runs", run_dirs, "Completed run directories")->required();

  auto* run_cmd = app.add_subcommand("run", "Full experiment from a config file");

  std::string bench_path;
  auto* bench_cmd = app.add_subcommand("bench", "Multiple-choice benchmark score and time");
  bench_cmd->add_option("--items", bench_path, "Benchmark JSONL")->required();
  bench_cmd->add_option("--rules", rules_path, "Rule file (JSON)");
  bench_cmd->add_option("--settings", setting_names, "Settings to run")->delimiter(',');

  std::string export_path;
  std::uint64_t weight_seed = 0;
  std::vector<int> identity_layers;
  auto* export_cmd = app.add_subcommand("export-model", "Write reference weights to a file");
  export_cmd->add_option("path", export_path, "Output weights file")->required();
  export_cmd->add_option("--weight-seed", weight_seed, "Initialization seed");
  export_cmd->add_option("--identity-layer", identity_layers, "Zero block at this index");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = effective_config(g);
    if (!dataset.empty()) cfg.dataset = dataset;
    if (!rules_path.empty()) cfg.rules = rules_path;
    if (repeats) cfg.repeats = *repeats;
    if (temperature) cfg.temperature = *temperature;
    if (mask) cfg.mask = *mask;
    if (!position_name.empty()) cfg.logits_position = parse_logits_position(position_name);
    if (!setting_names.empty()) {
      cfg.settings.clear();
      for (const auto& s : setting_names) cfg.settings.push_back(parse_setting_kind(s));
    }

    if (*layer_cmd) {
      const RuleSet rules = rules_for(cfg);
      const Setting setting = make_setting(parse_setting_kind(setting_name), rules);
      const auto records = load_records(cfg.dataset);
      const auto factory = make_model_factory(cfg.model, rules, decode_for(cfg));
      EngineOptions opts;
      opts.position = cfg.logits_position;
      opts.seed = cfg.seed;
      opts.workers = cfg.workers;
      const auto inputs = scan_inputs(records);
      const LayerProfile p = layer_scan(factory, inputs, setting, opts);
      emit(g.out, "layer_profile_" + setting.id() + ".json", to_json(p).dump(2) + "\n");
      if (g.out) emit(g.out, "layer_profile_" + setting.id() + ".csv", to_csv(p.records));
      if (p.input_ids.size() >= 2) std::cerr << "sdc = " << format_double(sdc(p)) << "\n";
    } else if (*clause_cmd) {
      const auto records = load_records(cfg.dataset);
      const PunctuationSplitter splitter(SplitOptions{cfg.min_clause_words});
      if (dump_clauses) {
        nlohmann::ordered_json out = nlohmann::ordered_json::array();
        for (const auto& q : records) {
          nlohmann::ordered_json item;
          item["input_id"] = q.id;
          item["clauses"] = nlohmann::ordered_json::array();
          for (const auto& c : splitter.split(q.query)) item["clauses"].push_back(to_json(c));
          out.push_back(std::move(item));
        }
        emit(g.out, "clauses.json", out.dump(2) + "\n");
        return 0;
      }
      const RuleSet rules = rules_for(cfg);
      const Setting setting = make_setting(parse_setting_kind(setting_name), rules);
      auto model = make_model_factory(cfg.model, rules, decode_for(cfg))();
      ClauseOptions opts;
      opts.repeats = cfg.repeats;
      opts.mask = cfg.mask;
      opts.position = cfg.logits_position;
      opts.seed = cfg.seed;
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& in : scan_inputs(records)) {
        out.push_back(to_json(clause_scan(*model, in, setting, opts, splitter)));
      }
      emit(g.out, "clauses_" + setting.id() + ".json", out.dump(2) + "\n");
    } else if (*scm_cmd) {
      scm_params.seed = cfg.seed;
      const auto draws = scm::sample(scm_params, scm_n);
      std::vector<double> xs, ys;
      for (const auto& d : draws) {
        xs.push_back(d.x);
        ys.push_back(d.y);
      }
      const auto est = scm::ace_do(scm_params, x1, x0, scm_n, crn);
      std::cout << "n = " << scm_n << "\n"
                << "corr(X, Y) observed = " << format_double(scm::correlation(xs, ys)) << "\n"
                << "corr(X, Y) analytic = " << format_double(scm::analytic_correlation(scm_params))
                << "\n"
                << "ace do(X=" << format_double(x1) << ") vs do(X=" << format_double(x0)
                << ") = " << format_double(est.ace) << " (se " << format_double(est.standard_error)
                << ", true " << format_double(scm_params.direct_effect * (x1 - x0)) << ")\n";
      if (!scm_csv.empty()) {
        std::string csv = "x,y,z\n";
        for (const auto& d : draws) {
          csv += format_double(d.x) + "," + format_double(d.y) + "," + format_double(d.z) + "\n";
        }
        write_file(scm_csv, csv);
      }
    } else if (*sample_cmd) {
      const RuleSet rules = rules_for(cfg);
      const auto records = load_records(cfg.dataset);
      const std::size_t want = k > 0 ? k : cfg.sample_size;
      std::vector<QueryRecord> chosen;
      if (selective || cfg.selective) {
        auto model = make_model_factory(cfg.model, rules, decode_for(cfg))();
        auto sel = selective_sample(*model, records, want, cfg.seed, rules);
        if (sel.warning) std::cerr << "warning: " << *sel.warning << "\n";
        chosen = std::move(sel.selected);
      } else {
        chosen = random_sample(records, want, cfg.seed);
      }
      std::string body;
      for (const auto& q : chosen) body += record_to_jsonl(q) + "\n";
      emit(g.out, "sample.jsonl", body);
    } else if (*compare_cmd) {
      std::vector<RatePair> published_rates;
      for (const auto& p : published::kModels) {
        published_rates.push_back(
            {std::string(p.model), p.detection_rate.fc, p.detection_rate.prompt});
      }
      const auto pub = improvement_ratio(published_rates);
      std::cout << "published rates: mean FC-over-prompt improvement = "
                << format_double(pub.mean * 100.0) << "% (headline "
                << format_double(published::kHeadlineImprovement * 100.0) << "%)\n";
      if (published_only) return 0;
      const RuleSet rules = rules_for(cfg);
      std::vector<QueryRecord> records;
      for (auto& q : load_records(cfg.dataset)) {
        if (q.label == Label::kMalicious) records.push_back(std::move(q));
      }
      const auto factory = make_model_factory(cfg.model, rules, decode_for(cfg));
      std::string outcomes;
      std::optional<double> fc_rate, prompt_rate;
      for (auto kind : cfg.settings) {
        const Setting s = make_setting(kind, rules);
        const DetectionReport r = detection_rate(factory, records, s, cfg.workers);
        std::cout << s.id() << (kind == SettingKind::kWithout ? " (heuristic)" : "")
                  << ": detection rate = " << format_double(r.rate) << " over "
                  << r.outcomes.size() << " queries\n";
        for (const auto& o : r.outcomes) outcomes += outcome_to_jsonl(o) + "\n";
        if (kind == SettingKind::kFc) fc_rate = r.rate;
        if (kind == SettingKind::kPrompt) prompt_rate = r.rate;
      }
      if (fc_rate && prompt_rate) {
        const RatePair pair{cfg.model, *fc_rate, *prompt_rate};
        try {
          const auto local = improvement_ratio(std::span(&pair, 1));
          std::cout << "local improvement = " << format_double(local.mean * 100.0) << "%\n";
        } catch (const PreconditionError& e) {
          std::cout << "local improvement: " << e.what() << "\n";
        }
      }
      if (g.out) emit(g.out, "outcomes.jsonl", outcomes);
    } else if (*report_cmd) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const fs::path out = g.out ? fs::path(*g.out) : fs::path("report");
      for (const auto& f : write_report(dirs, out)) {
        std::cerr << "wrote " << (out / f.name).string() << "\n";
      }
    } else if (*run_cmd) {
      if (!g.config) throw ConfigError("run needs --config");
      const RunResult r = run_experiment(cfg);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << r.directory.string() << ": " << r.queries << " queries, " << r.failed_queries
                << " failed, " << r.artifacts.size() << " artifacts\n";
    } else if (*bench_cmd) {
      const RuleSet rules = rules_for(cfg);
      const auto items = load_choice_items(bench_path);
      const auto factory = make_model_factory(cfg.model, rules, decode_for(cfg));
      for (auto kind : cfg.settings) {
        const auto r = run_benchmark(factory, items, make_setting(kind, rules), cfg.workers,
                                     cfg.seed);
        std::cout << r.setting << ": score = " << format_double(r.score)
                  << ", total = " << format_double(r.total_ms) << " ms, mean = "
                  << format_double(r.total_ms / static_cast<double>(items.size())) << " ms\n";
      }
    } else if (*export_cmd) {
      ReferenceConfig rc;
      rc.seed = weight_seed;
      rc.identity_layers = identity_layers;
      ReferenceModel::build(rc).save(export_path);
      std::cerr << "wrote " << export_path << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << describe(e) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << describe(e) << "\n";
    return 1;
  }
  return 0;
}
