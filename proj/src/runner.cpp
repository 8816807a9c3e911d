#include "fccausal/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "fccausal/benchmark.hpp"
#include "fccausal/errors.hpp"
#include "fccausal/io_util.hpp"
#include "fccausal/reference_model.hpp"
#include "fccausal/scripted_model.hpp"
#include "fccausal/worker_pool.hpp"

namespace fccausal {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = value.find(',');
    const auto item = trim(value.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    value.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(value) +
                      "' is not a valid number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

// Per-query decode seed, independent of which worker handles the query.
std::uint64_t query_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

std::string stub_call(const RuleSet& rules) {
  const auto specs = build_function_specs(rules);
  ordered_json call;
  call["name"] = specs.front().name;
  call["arguments"] = {{"category", rules.front().name}, {"evidence", "stub"}};
  return call.dump();
}

template <typename Model>
ModelFactory copying_factory(std::shared_ptr<const Model> proto, const DecodeParams& decode) {
  return [proto, decode]() -> std::unique_ptr<ModelBackend> {
    auto m = std::make_unique<Model>(*proto);
    m->set_decode(decode);
    return m;
  };
}

std::uint64_t parse_u64(std::string_view spec, std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("model spec '" + std::string(spec) + "': bad number");
  }
  return v;
}

struct Failure {
  std::string setting;
  std::string analysis;
  std::string input_id;
  std::string message;
};

std::string describe(const std::exception& e) {
  std::string msg = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    msg += " <- " + describe(inner);
  } catch (...) {
  }
  return msg;
}

struct SettingRun {
  Setting setting;
  std::optional<LayerProfile> layers;
  std::vector<ClauseProfile> clauses;
  std::vector<FocusSample> focus;
  std::optional<DetectionReport> detection;
  std::optional<BenchmarkResult> benchmark;
  std::size_t detection_queries = 0;
  double layer_ms = 0.0;
  double clause_ms = 0.0;
  double detection_ms = 0.0;
};

std::string dump(const ordered_json& j) {
  return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

}  // namespace

std::string_view to_string(Analysis analysis) {
  switch (analysis) {
    case Analysis::kLayer:
      return "layer";
    case Analysis::kClause:
      return "clause";
    case Analysis::kDetection:
      return "detection";
    case Analysis::kBenchmark:
      return "benchmark";
  }
  return "?";
}

Analysis parse_analysis(std::string_view text) {
  if (text == "layer") return Analysis::kLayer;
  if (text == "clause") return Analysis::kClause;
  if (text == "detection") return Analysis::kDetection;
  if (text == "benchmark") return Analysis::kBenchmark;
  throw ConfigError("unknown analysis '" + std::string(text) +
                    "' (expected layer, clause, detection or benchmark)");
}

bool RunConfig::has(Analysis a) const {
  return std::find(analyses.begin(), analyses.end(), a) != analyses.end();
}

bool RunConfig::has(SettingKind k) const {
  return std::find(settings.begin(), settings.end(), k) != settings.end();
}

void RunConfig::validate() const {
  if (model.empty()) throw ConfigError("config: model is empty");
  if (settings.empty()) throw ConfigError("config: settings is empty");
  if (std::set<SettingKind>(settings.begin(), settings.end()).size() != settings.size()) {
    throw ConfigError("config: duplicate setting");
  }
  if (analyses.empty()) throw ConfigError("config: analyses is empty");
  if (dataset.empty()) throw ConfigError("config: dataset is required");
  if (has(Analysis::kBenchmark) && benchmark.empty()) {
    throw ConfigError("config: the benchmark analysis needs a benchmark file");
  }
  if (sample_size < 1) throw ConfigError("config: sample_size must be >= 1");
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (repeats < 1) throw ConfigError("config: repeats must be >= 1");
  if (!std::isfinite(temperature) || temperature < 0.0) {
    throw ConfigError("config: temperature must be finite and >= 0");
  }
  if (max_new_tokens < 1) throw ConfigError("config: max_new_tokens must be >= 1");
  if (min_clause_words < 1) throw ConfigError("config: min_clause_words must be >= 1");
  if (run_name.empty() || run_name.front() == '.' ||
      run_name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("config: run_name must be a plain directory name");
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "'");
    }
    try {
      if (key == "model") {
        c.model = value;
      } else if (key == "settings") {
        c.settings.clear();
        for (const auto& s : split_list(value)) c.settings.push_back(parse_setting_kind(s));
      } else if (key == "dataset") {
        c.dataset = std::string(value);
      } else if (key == "rules") {
        c.rules = std::string(value);
      } else if (key == "benchmark") {
        c.benchmark = std::string(value);
      } else if (key == "sample_size") {
        c.sample_size = parse_number<std::size_t>(key, value);
      } else if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(key, value);
      } else if (key == "workers") {
        c.workers = parse_number<int>(key, value);
      } else if (key == "repeats") {
        c.repeats = parse_number<int>(key, value);
      } else if (key == "temperature") {
        c.temperature = parse_number<double>(key, value);
      } else if (key == "max_new_tokens") {
        c.max_new_tokens = parse_number<int>(key, value);
      } else if (key == "selective") {
        c.selective = parse_bool(key, value);
      } else if (key == "analyses") {
        c.analyses.clear();
        for (const auto& a : split_list(value)) c.analyses.push_back(parse_analysis(a));
      } else if (key == "logits_position") {
        c.logits_position = parse_logits_position(value);
      } else if (key == "mask") {
        c.mask = value;
      } else if (key == "min_clause_words") {
        c.min_clause_words = parse_number<int>(key, value);
      } else if (key == "correlation") {
        c.correlation = parse_correlation_kind(value);
      } else if (key == "correlation_mode") {
        c.correlation_mode = parse_correlation_mode(value);
      } else if (key == "out") {
        c.out = std::string(value);
      } else if (key == "run_name") {
        c.run_name = value;
      } else if (key == "overwrite") {
        c.overwrite = parse_bool(key, value);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  RunConfig c = parse_config(read_file(path));
  const fs::path base = path.parent_path();
  for (fs::path* p : {&c.dataset, &c.rules, &c.benchmark, &c.out}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return c;
}

std::string to_config_text(const RunConfig& c) {
  std::vector<std::string> settings, analyses;
  for (auto s : c.settings) settings.emplace_back(to_string(s));
  for (auto a : c.analyses) analyses.emplace_back(to_string(a));
  std::ostringstream out;
  out << "model = " << c.model << "\n"
      << "settings = " << join(settings) << "\n"
      << "dataset = " << c.dataset.string() << "\n"
      << "rules = " << c.rules.string() << "\n"
      << "benchmark = " << c.benchmark.string() << "\n"
      << "sample_size = " << c.sample_size << "\n"
      << "seed = " << c.seed << "\n"
      << "workers = " << c.workers << "\n"
      << "repeats = " << c.repeats << "\n"
      << "temperature = " << format_double(c.temperature) << "\n"
      << "max_new_tokens = " << c.max_new_tokens << "\n"
      << "selective = " << (c.selective ? "true" : "false") << "\n"
      << "analyses = " << join(analyses) << "\n"
      << "logits_position = " << to_string(c.logits_position) << "\n"
      << "mask = " << c.mask << "\n"
      << "min_clause_words = " << c.min_clause_words << "\n"
      << "correlation = " << to_string(c.correlation) << "\n"
      << "correlation_mode = " << to_string(c.correlation_mode) << "\n"
      << "out = " << c.out.string() << "\n"
      << "run_name = " << c.run_name << "\n"
      << "overwrite = " << (c.overwrite ? "true" : "false") << "\n";
  return out.str();
}

ModelFactory make_model_factory(std::string_view spec, const RuleSet& rules,
                                const DecodeParams& decode) {
  const auto after = [&](std::string_view prefix) -> std::optional<std::string_view> {
    if (spec.substr(0, prefix.size()) == prefix) return spec.substr(prefix.size());
    return std::nullopt;
  };

  if (spec == "reference") {
    return copying_factory(std::make_shared<const ReferenceModel>(ReferenceModel::build({})),
                           decode);
  }
  if (auto rest = after("reference-seed:")) {
    ReferenceConfig rc;
    rc.seed = parse_u64(spec, *rest);
    return copying_factory(std::make_shared<const ReferenceModel>(ReferenceModel::build(rc)),
                           decode);
  }
  if (auto rest = after("reference-identity:")) {
    ReferenceConfig rc;
    rc.identity_layers = {static_cast<int>(parse_u64(spec, *rest))};
    rc.validate();
    return copying_factory(std::make_shared<const ReferenceModel>(ReferenceModel::build(rc)),
                           decode);
  }
  std::optional<fs::path> weights;
  if (auto rest = after("weights:")) {
    weights = fs::path(std::string(*rest));
  } else if (spec.size() > 4 && spec.substr(spec.size() - 4) == ".bin") {
    weights = fs::path(std::string(spec));
  }
  if (weights) {
    if (!fs::exists(*weights)) throw ConfigError("weights file not found: " + weights->string());
    return copying_factory(std::make_shared<const ReferenceModel>(ReferenceModel::load(*weights)),
                           decode);
  }
  if (auto rest = after("stub:")) {
    if (rules.empty()) throw ConfigError("stub models need at least one rule");
    const std::string call = stub_call(rules);
    const std::string sentinel = "MALICIOUS: " + rules.front().name;
    std::shared_ptr<const ScriptedModel> proto;
    if (*rest == "always-calls") {
      proto = std::make_shared<const ScriptedModel>(stubs::always_calls(call));
    } else if (*rest == "silent") {
      proto = std::make_shared<const ScriptedModel>(stubs::silent());
    } else if (*rest == "fc-only") {
      proto = std::make_shared<const ScriptedModel>(stubs::fc_only(call));
    } else if (*rest == "compliant") {
      proto = std::make_shared<const ScriptedModel>(stubs::compliant(call, sentinel));
    } else {
      throw ConfigError("unknown stub '" + std::string(*rest) + "'");
    }
    return copying_factory(proto, decode);
  }
  throw ConfigError("unknown model spec '" + std::string(spec) + "'");
}

std::vector<QueryRecord> random_sample(std::span<const QueryRecord> candidates, std::size_t k,
                                       std::uint64_t seed) {
  if (k < 1) throw PreconditionError("sample: k must be >= 1");
  if (k > candidates.size()) {
    throw PreconditionError("sample: k = " + std::to_string(k) + " exceeds " +
                            std::to_string(candidates.size()) + " candidates");
  }
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<QueryRecord> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(candidates[order[i]]);
  return out;
}

SelectionResult selective_sample(ModelBackend& model, std::span<const QueryRecord> candidates,
                                 std::size_t k, std::uint64_t seed, const RuleSet& rules) {
  if (k < 1) throw PreconditionError("selective_sample: k must be >= 1");
  const Setting fc = make_setting(SettingKind::kFc, rules);
  const Setting prompt = make_setting(SettingKind::kPrompt, rules);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].label == Label::kMalicious) order.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  SelectionResult result;
  for (std::size_t idx : order) {
    if (result.selected.size() >= k) break;
    const QueryRecord& q = candidates[idx];
    result.scanned_ids.push_back(q.id);
    model.reseed(query_seed(seed, idx));
    const bool fc_hit = evaluate_query(model, q, fc).outcome.detected;
    if (!fc_hit) continue;
    model.reseed(query_seed(seed, idx));
    const bool prompt_hit = evaluate_query(model, q, prompt).outcome.detected;
    if (!prompt_hit) result.selected.push_back(q);
  }
  if (result.selected.size() < k) {
    result.warning = "selective sampling exhausted " + std::to_string(result.scanned_ids.size()) +
                     " candidates and found " + std::to_string(result.selected.size()) + " of " +
                     std::to_string(k);
  }
  return result;
}

RunResult run_experiment(const RunConfig& config) {
  config.validate();
  const RuleSet rules = config.rules.empty() ? default_rules() : load_rules(config.rules);
  DecodeParams decode;
  decode.temperature = config.temperature;
  decode.max_new_tokens = config.max_new_tokens;
  decode.seed = config.seed;
  return run_experiment(config, make_model_factory(config.model, rules, decode));
}

RunResult run_experiment(const RunConfig& config, const ModelFactory& factory) {
  const auto run_start = std::chrono::steady_clock::now();
  config.validate();

  // Everything below up to the first inference must fail fast.
  const RuleSet rules = config.rules.empty() ? default_rules() : load_rules(config.rules);
  if (!fs::exists(config.dataset)) {
    throw ConfigError("dataset not found: " + config.dataset.string());
  }
  const LoadResult loaded = load_dataset(config.dataset);
  RunResult result;
  for (const auto& d : loaded.diagnostics) {
    result.warnings.push_back("dataset line " + std::to_string(d.line) + ": " + d.message);
  }
  if (config.sample_size > loaded.records.size()) {
    throw ConfigError("sample_size " + std::to_string(config.sample_size) + " exceeds dataset size " +
                      std::to_string(loaded.records.size()));
  }
  const fs::path final_dir = config.out / config.run_name;
  if (fs::exists(final_dir) && !config.overwrite) {
    throw RunError("run directory already exists: " + final_dir.string());
  }
  std::vector<ChoiceItem> choice_items;
  if (config.has(Analysis::kBenchmark)) {
    if (!fs::exists(config.benchmark)) {
      throw ConfigError("benchmark file not found: " + config.benchmark.string());
    }
    choice_items = load_choice_items(config.benchmark);
    if (choice_items.empty()) throw ConfigError("benchmark file has no items");
  }
  std::vector<Setting> settings;
  for (auto kind : config.settings) settings.push_back(make_setting(kind, rules));

  auto probe = factory();
  const bool needs_logits = config.has(Analysis::kLayer) || config.has(Analysis::kClause);
  if (needs_logits && !probe->logits_capability()) {
    throw CapabilityError("model '" + probe->identity() +
                          "' exposes no logits; layer and clause analyses need them");
  }
  const std::string model_id = probe->identity();

  // Sampling.
  auto t = std::chrono::steady_clock::now();
  std::vector<QueryRecord> sample;
  ordered_json selection;
  selection["kind"] = "selection";
  selection["seed"] = config.seed;
  selection["selective"] = config.selective;
  selection["requested"] = config.sample_size;
  if (config.selective) {
    SelectionResult sel =
        selective_sample(*probe, loaded.records, config.sample_size, config.seed, rules);
    if (sel.warning) result.warnings.push_back(*sel.warning);
    selection["scanned_ids"] = sel.scanned_ids;
    selection["warning"] = sel.warning ? ordered_json(*sel.warning) : ordered_json(nullptr);
    sample = std::move(sel.selected);
  } else {
    sample = random_sample(loaded.records, config.sample_size, config.seed);
  }
  const double selection_ms = elapsed_ms(t);
  if (sample.empty()) throw RunError("no query selected; nothing to run");
  std::vector<std::string> ids;
  for (const auto& q : sample) ids.push_back(q.id);
  selection["selected_ids"] = ids;
  std::map<std::string, const QueryRecord*> by_id;
  for (const auto& q : sample) by_id[q.id] = &q;

  std::vector<ScanInput> inputs;
  for (const auto& q : sample) inputs.push_back({q.id, q.query});
  std::vector<std::size_t> malicious;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (sample[i].label == Label::kMalicious) malicious.push_back(i);
  }

  std::vector<Failure> failures;
  std::vector<SettingRun> runs;
  std::vector<std::string> focus_notes;
  for (const auto& setting : settings) {
    SettingRun run;
    run.setting = setting;

    if (config.has(Analysis::kLayer)) {
      t = std::chrono::steady_clock::now();
      EngineOptions opts;
      opts.position = config.logits_position;
      opts.seed = config.seed;
      opts.workers = config.workers;
      opts.skip_failed_inputs = true;
      try {
        run.layers = layer_scan(factory, inputs, setting, opts);
        for (const auto& f : run.layers->failures) {
          failures.push_back({setting.id(), "layer", f.input_id, f.message});
        }
      } catch (const PreconditionError& e) {
        for (const auto& in : inputs) failures.push_back({setting.id(), "layer", in.id, e.what()});
      }
      run.layer_ms = elapsed_ms(t);
    }

    if (config.has(Analysis::kClause)) {
      t = std::chrono::steady_clock::now();
      ClauseOptions opts;
      opts.repeats = config.repeats;
      opts.mask = config.mask;
      opts.position = config.logits_position;
      opts.seed = config.seed;
      const PunctuationSplitter splitter(SplitOptions{config.min_clause_words});
      std::vector<std::optional<ClauseProfile>> profiles(inputs.size());
      std::vector<std::string> errors(inputs.size());
      parallel_over_models(factory, inputs.size(), config.workers,
                           [&](ModelBackend& model, std::size_t i) {
                             try {
                               profiles[i] = clause_scan(model, inputs[i], setting, opts, splitter);
                             } catch (const std::exception& e) {
                               errors[i] = describe(e);
                             }
                           });
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!profiles[i]) {
          failures.push_back({setting.id(), "clause", inputs[i].id, errors[i]});
          continue;
        }
        const QueryRecord& q = *by_id.at(inputs[i].id);
        if (q.core_objective) {
          for (std::size_t c = 0; c < profiles[i]->clauses.size(); ++c) {
            const auto& rec = profiles[i]->records[c];
            if (!rec.ce_norm) continue;
            run.focus.push_back({q.id, profiles[i]->clauses[c].clause_id,
                                 semantic_similarity(profiles[i]->clauses[c].text,
                                                     *q.core_objective),
                                 *rec.ce_norm});
          }
        }
        run.clauses.push_back(std::move(*profiles[i]));
      }
      run.clause_ms = elapsed_ms(t);
    }

    if (config.has(Analysis::kDetection) && !malicious.empty()) {
      t = std::chrono::steady_clock::now();
      std::vector<std::optional<QueryOutcome>> outcomes(malicious.size());
      std::vector<std::string> errors(malicious.size());
      parallel_over_models(factory, malicious.size(), config.workers,
                           [&](ModelBackend& model, std::size_t i) {
                             const std::size_t idx = malicious[i];
                             try {
                               model.reseed(query_seed(config.seed, idx));
                               outcomes[i] = evaluate_query(model, sample[idx], setting);
                             } catch (const std::exception& e) {
                               errors[i] = describe(e);
                             }
                           });
      DetectionReport report;
      report.setting = setting.id();
      std::size_t hits = 0;
      for (std::size_t i = 0; i < malicious.size(); ++i) {
        if (!outcomes[i]) {
          failures.push_back({setting.id(), "detection", sample[malicious[i]].id, errors[i]});
          continue;
        }
        hits += outcomes[i]->outcome.detected ? 1 : 0;
        report.outcomes.push_back(std::move(*outcomes[i]));
      }
      run.detection_queries = malicious.size();
      if (!report.outcomes.empty()) {
        report.rate = static_cast<double>(hits) / static_cast<double>(report.outcomes.size());
        run.detection = std::move(report);
      }
      run.detection_ms = elapsed_ms(t);
    }
    if (config.has(Analysis::kBenchmark)) {
      run.benchmark = run_benchmark(factory, choice_items, setting, config.workers, config.seed);
    }
    runs.push_back(std::move(run));
  }

  std::set<std::string> failed_ids;
  for (const auto& f : failures) failed_ids.insert(f.input_id);
  result.queries = sample.size();
  result.failed_queries = failed_ids.size();
  if (static_cast<double>(failed_ids.size()) >
      kMaxFailureShare * static_cast<double>(sample.size())) {
    std::string msg = std::to_string(failed_ids.size()) + " of " + std::to_string(sample.size()) +
                      " queries failed (limit " + format_double(kMaxFailureShare * 100.0) + "%)";
    if (!failures.empty()) msg += "; first: " + failures.front().message;
    throw RunError(msg);
  }

  // Metrics.
  const SettingRun* baseline = nullptr;
  for (const auto& r : runs) {
    if (r.setting.kind == SettingKind::kWithout && r.layers) baseline = &r;
  }
  ordered_json metrics;
  metrics["kind"] = "metrics";
  metrics["model"] = model_id;
  metrics["seed"] = config.seed;
  metrics["correlation"] = to_string(config.correlation);
  metrics["correlation_mode"] = to_string(config.correlation_mode);
  metrics["settings"] = ordered_json::array();
  std::vector<std::string> metric_notes;
  for (const auto& r : runs) {
    MetricReport m;
    m.setting = r.setting.id();
    if (r.layers) {
      if (r.layers->input_ids.size() >= 2) {
        m.sdc = sdc(*r.layers);
      } else {
        metric_notes.push_back(m.setting + ": sdc needs at least two inputs");
      }
      if (baseline && baseline != &r) {
        m.baseline = baseline->setting.id();
        m.ad = ad(r.layers->ace, baseline->layers->ace);
      }
    }
    if (config.has(Analysis::kClause)) {
      try {
        m.correlation =
            focus_correlation(r.focus, config.correlation, config.correlation_mode).correlation;
      } catch (const Error& e) {
        metric_notes.push_back(m.setting + ": no focus correlation (" + e.what() + ")");
      }
    }
    metrics["settings"].push_back(to_json(m));
  }
  metrics["notes"] = metric_notes;

  // Serialize.
  std::vector<std::pair<std::string, std::string>> analysis_files;
  std::vector<std::pair<std::string, std::string>> timing_files;
  {
    // out and overwrite only place the run directory; leaving them out
    // keeps config.txt identical for the same experiment wherever it lands.
    std::string text = "# out and overwrite omitted\n";
    std::istringstream lines(to_config_text(config));
    for (std::string l; std::getline(lines, l);) {
      if (l.rfind("out = ", 0) == 0 || l.rfind("overwrite = ", 0) == 0) continue;
      text += l + "\n";
    }
    analysis_files.emplace_back("config.txt", text);
  }
  analysis_files.emplace_back("selection.json", dump(selection));
  {
    std::string jsonl;
    for (const auto& q : sample) jsonl += record_to_jsonl(q) + "\n";
    analysis_files.emplace_back("sample.jsonl", jsonl);
  }
  ordered_json detection;
  detection["kind"] = "detection";
  detection["model"] = model_id;
  detection["seed"] = config.seed;
  detection["settings"] = ordered_json::array();
  std::string outcomes_jsonl;
  ordered_json benchmark;
  benchmark["kind"] = "benchmark";
  benchmark["model"] = model_id;
  benchmark["seed"] = config.seed;
  benchmark["settings"] = ordered_json::array();
  ordered_json timing;
  timing["kind"] = "timing";
  timing["model"] = model_id;
  timing["selection_ms"] = selection_ms;
  timing["settings"] = ordered_json::array();

  for (const auto& r : runs) {
    const std::string sid = r.setting.id();
    if (r.layers) {
      analysis_files.emplace_back("layer_profile_" + sid + ".json", dump(to_json(*r.layers)));
      analysis_files.emplace_back("layer_profile_" + sid + ".csv", to_csv(r.layers->records));
    }
    if (config.has(Analysis::kClause)) {
      ordered_json cj;
      cj["kind"] = "clause_profiles";
      cj["model"] = model_id;
      cj["setting"] = sid;
      cj["seed"] = config.seed;
      cj["repeats"] = config.repeats;
      cj["profiles"] = ordered_json::array();
      for (const auto& p : r.clauses) cj["profiles"].push_back(to_json(p));
      analysis_files.emplace_back("clauses_" + sid + ".json", dump(cj));

      ordered_json fj;
      fj["kind"] = "focus_samples";
      fj["setting"] = sid;
      fj["seed"] = config.seed;
      fj["samples"] = ordered_json::array();
      for (const auto& s : r.focus) {
        fj["samples"].push_back({{"input_id", s.input_id},
                                 {"clause_id", s.clause_id},
                                 {"similarity", s.similarity},
                                 {"effect", s.effect}});
      }
      analysis_files.emplace_back("focus_" + sid + ".json", dump(fj));
    }
    ordered_json tj;
    tj["setting"] = sid;
    tj["layer_ms"] = r.layer_ms;
    tj["clause_ms"] = r.clause_ms;
    tj["detection_ms"] = r.detection_ms;
    if (r.detection) {
      double total = 0.0;
      ordered_json dj;
      dj["setting"] = sid;
      dj["rate"] = r.detection->rate;
      dj["heuristic"] = r.setting.kind == SettingKind::kWithout;
      dj["queries"] = r.detection_queries;
      dj["evaluated"] = r.detection->outcomes.size();
      dj["outcomes"] = ordered_json::array();
      for (const auto& o : r.detection->outcomes) {
        total += o.latency_ms;
        outcomes_jsonl += outcome_to_jsonl(o) + "\n";
        dj["outcomes"].push_back({{"query_id", o.query_id},
                                  {"detected", o.outcome.detected},
                                  {"evidence", evidence_to_json(o.outcome.evidence)},
                                  {"malformed", o.outcome.malformed},
                                  {"heuristic", o.outcome.heuristic}});
      }
      detection["settings"].push_back(std::move(dj));
      tj["queries"] = r.detection->outcomes.size();
      tj["latency_total_ms"] = total;
      tj["latency_mean_ms"] = total / static_cast<double>(r.detection->outcomes.size());
    }
    if (r.benchmark) {
      ordered_json bj;
      bj["setting"] = sid;
      bj["score"] = r.benchmark->score;
      bj["items"] = r.benchmark->outcomes.size();
      bj["outcomes"] = ordered_json::array();
      for (const auto& o : r.benchmark->outcomes) {
        bj["outcomes"].push_back(
            {{"item_id", o.item_id},
             {"chosen", o.chosen ? ordered_json(std::string(1, choice_letter(*o.chosen)))
                                 : ordered_json(nullptr)},
             {"correct", o.correct}});
      }
      benchmark["settings"].push_back(std::move(bj));
      tj["benchmark_items"] = r.benchmark->outcomes.size();
      tj["benchmark_total_ms"] = r.benchmark->total_ms;
      tj["benchmark_mean_ms"] =
          r.benchmark->total_ms / static_cast<double>(r.benchmark->outcomes.size());
    }
    timing["settings"].push_back(std::move(tj));
  }
  if (config.has(Analysis::kBenchmark)) analysis_files.emplace_back("benchmark.json", dump(benchmark));
  if (config.has(Analysis::kDetection)) {
    analysis_files.emplace_back("detection.json", dump(detection));
    timing_files.emplace_back("outcomes.jsonl", outcomes_jsonl);
  }
  analysis_files.emplace_back("metrics.json", dump(metrics));

  ordered_json failures_json;
  failures_json["kind"] = "failures";
  failures_json["queries"] = sample.size();
  failures_json["failed_queries"] = failed_ids.size();
  failures_json["failures"] = ordered_json::array();
  for (const auto& f : failures) {
    failures_json["failures"].push_back({{"setting", f.setting},
                                         {"analysis", f.analysis},
                                         {"input_id", f.input_id},
                                         {"message", f.message}});
  }
  failures_json["warnings"] = result.warnings;
  analysis_files.emplace_back("failures.json", dump(failures_json));
  timing["total_ms"] = elapsed_ms(run_start);
  timing_files.emplace_back("timing.json", dump(timing));

  // Stage, then rename into place.
  fs::create_directories(config.out);
  const std::string tag = std::to_string(::getpid());
  const fs::path staging = config.out / ("." + config.run_name + ".staging-" + tag);
  fs::remove_all(staging);
  try {
    fs::create_directory(staging);
    ordered_json manifest;
    manifest["kind"] = "manifest";
    manifest["model"] = model_id;
    manifest["seed"] = config.seed;
    manifest["run_name"] = config.run_name;
    manifest["artifacts"] = ordered_json::array();
    auto emit = [&](const std::string& name, const std::string& body, const char* kind) {
      write_file(staging / name, body);
      ArtifactEntry a{name, kind, sha256_hex(body), body.size()};
      manifest["artifacts"].push_back(
          {{"path", a.path}, {"kind", a.kind}, {"sha256", a.sha256}, {"bytes", a.bytes}});
      result.artifacts.push_back(std::move(a));
    };
    for (const auto& [name, body] : analysis_files) emit(name, body, "analysis");
    for (const auto& [name, body] : timing_files) emit(name, body, "timing");
    write_file(staging / "manifest.json", dump(manifest));

    if (fs::exists(final_dir)) {
      const fs::path old = config.out / ("." + config.run_name + ".old-" + tag);
      fs::remove_all(old);
      fs::rename(final_dir, old);
      fs::rename(staging, final_dir);
      fs::remove_all(old);
    } else {
      fs::rename(staging, final_dir);
    }
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  result.directory = final_dir;
  return result;
}

std::vector<ArtifactEntry> read_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  if (!fs::exists(path)) throw RunError("no manifest in " + run_dir.string());
  const auto j = nlohmann::json::parse(read_file(path));
  std::vector<ArtifactEntry> out;
  for (const auto& a : j.at("artifacts")) {
    out.push_back({a.at("path").get<std::string>(), a.at("kind").get<std::string>(),
                   a.at("sha256").get<std::string>(), a.at("bytes").get<std::size_t>()});
  }
  return out;
}

}  // namespace fccausal
