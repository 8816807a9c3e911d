#include "fccausal/report.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "fccausal/errors.hpp"
#include "fccausal/fc_harness.hpp"
#include "fccausal/io_util.hpp"
#include "fccausal/published.hpp"
#include "fccausal/runner.hpp"

namespace fccausal {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kSettingIds[] = {"without", "prompt", "fc"};

std::string cell(std::optional<double> v) { return v ? format_double(*v) : std::string(); }

template <typename Map>
std::optional<double> lookup(const Map& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

std::string between(std::string_view s, std::string_view prefix, std::string_view suffix) {
  return std::string(s.substr(prefix.size(), s.size() - prefix.size() - suffix.size()));
}

std::optional<double> run_sdc(const RunData& run, const std::string& setting) {
  const auto it = run.layer_profiles.find(setting);
  if (it == run.layer_profiles.end() || it->second.input_ids.size() < 2) return std::nullopt;
  return sdc(it->second);
}

std::optional<double> run_ad(const RunData& run, const std::string& setting) {
  const auto base = run.layer_profiles.find("without");
  const auto it = run.layer_profiles.find(setting);
  if (base == run.layer_profiles.end() || it == run.layer_profiles.end()) return std::nullopt;
  return ad(it->second.ace, base->second.ace);
}

std::string line(std::initializer_list<std::string> fields) {
  std::string out;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) out += ',';
    out += csv_field(f);
    first = false;
  }
  return out + "\n";
}

std::string table2(std::span<const RunData> runs) {
  std::string out = "source,model,run,sdc_without,sdc_prompt,sdc_fc,ad_prompt,ad_fc\n";
  for (const auto& r : runs) {
    out += line({"local", r.model, r.name, cell(run_sdc(r, "without")), cell(run_sdc(r, "prompt")),
                 cell(run_sdc(r, "fc")), cell(run_ad(r, "prompt")), cell(run_ad(r, "fc"))});
  }
  for (const auto& p : published::kModels) {
    out += line({"published", std::string(p.model), "", format_double(p.sdc.without),
                 format_double(p.sdc.prompt), format_double(p.sdc.fc), format_double(p.ad_prompt),
                 format_double(p.ad_fc)});
  }
  return out;
}

std::string table3(std::span<const RunData> runs) {
  // The uninstructed column relies on the refusal-lexicon heuristic.
  std::string out = "source,model,run,without_heuristic,prompt,fc\n";
  for (const auto& r : runs) {
    out += line({"local", r.model, r.name, cell(lookup(r.detection_rates, "without")),
                 cell(lookup(r.detection_rates, "prompt")), cell(lookup(r.detection_rates, "fc"))});
  }
  for (const auto& p : published::kModels) {
    out += line({"published", std::string(p.model), "", format_double(p.detection_rate.without),
                 format_double(p.detection_rate.prompt), format_double(p.detection_rate.fc)});
  }
  return out;
}

std::string table4(std::span<const RunData> runs) {
  std::string out =
      "source,model,run,setting,score,detection_total_ms,detection_mean_ms,benchmark_total_ms,"
      "minutes\n";
  for (const auto& r : runs) {
    for (const std::string s : kSettingIds) {
      const auto score = lookup(r.benchmark_scores, s);
      const auto det_total = lookup(r.latency_total_ms, s);
      const auto bench_total = lookup(r.benchmark_total_ms, s);
      if (!score && !det_total && !bench_total) continue;
      std::optional<double> minutes;
      if (bench_total) minutes = *bench_total / 60000.0;
      out += line({"local", r.model, r.name, s, cell(score), cell(det_total),
                   cell(lookup(r.latency_mean_ms, s)), cell(bench_total), cell(minutes)});
    }
  }
  for (const auto& p : published::kModels) {
    const std::pair<const char*, std::pair<double, double>> rows[] = {
        {"without", {p.choice_score.without, p.choice_minutes.without}},
        {"prompt", {p.choice_score.prompt, p.choice_minutes.prompt}},
        {"fc", {p.choice_score.fc, p.choice_minutes.fc}},
    };
    for (const auto& [s, v] : rows) {
      out += line({"published", std::string(p.model), "", s, format_double(v.first), "", "", "",
                   format_double(v.second)});
    }
  }
  return out;
}

std::string layer_distribution(std::span<const RunData> runs) {
  std::string out = "model,run,setting,layer,inputs,min,q1,median,q3,max,ace\n";
  for (const auto& r : runs) {
    for (const auto& [setting, profile] : r.layer_profiles) {
      for (std::size_t l = 0; l < profile.layers.size(); ++l) {
        const auto column = profile.normalized_column(l);
        const Quartiles q = quartiles(column);
        out += line({r.model, r.name, setting, std::to_string(profile.layers[l]),
                     std::to_string(column.size()), format_double(q.min), format_double(q.q1),
                     format_double(q.median), format_double(q.q3), format_double(q.max),
                     format_double(profile.ace[l])});
      }
    }
  }
  return out;
}

std::string focus_scatter(std::span<const RunData> runs) {
  std::string out = "model,run,setting,input_id,clause_id,similarity,effect\n";
  for (const auto& r : runs) {
    for (const auto& [setting, samples] : r.focus) {
      for (const auto& s : samples) {
        out += line({r.model, r.name, setting, s.input_id, s.clause_id,
                     format_double(s.similarity), format_double(s.effect)});
      }
    }
  }
  return out;
}

std::string focus_correlations(std::span<const RunData> runs) {
  std::string out = "source,model,run,setting,kind,mode,pairs,r\n";
  for (const auto& r : runs) {
    for (const auto& [setting, samples] : r.focus) {
      std::optional<double> value;
      std::size_t pairs = samples.size();
      try {
        const FocusResult f = focus_correlation(samples, r.correlation, r.correlation_mode);
        value = f.correlation;
        pairs = f.pairs;
      } catch (const Error&) {
      }
      out += line({"local", r.model, r.name, setting, std::string(to_string(r.correlation)),
                   std::string(to_string(r.correlation_mode)), std::to_string(pairs),
                   cell(value)});
    }
  }
  for (const auto& p : published::kModels) {
    out += line({"published", std::string(p.model), "", "without", "pearson", "", "",
                 format_double(p.correlation_without)});
    out += line({"published", std::string(p.model), "", "fc", "pearson", "", "",
                 format_double(p.correlation_fc)});
  }
  return out;
}

ordered_json improvement_json(const ImprovementResult& r) {
  ordered_json j;
  j["mean"] = r.mean;
  j["per_model"] = ordered_json::array();
  for (const auto& [model, ratio] : r.per_model) {
    j["per_model"].push_back(
        {{"model", model}, {"ratio", ratio ? ordered_json(*ratio) : ordered_json(nullptr)}});
  }
  j["warnings"] = r.warnings;
  return j;
}

void check_layer_counts(std::span<const RunData> runs) {
  std::optional<std::size_t> layers;
  std::string first;
  for (const auto& r : runs) {
    for (const auto& [setting, p] : r.layer_profiles) {
      const std::string where = r.name + "/" + setting;
      if (!layers) {
        layers = p.layers.size();
        first = where;
      } else if (*layers != p.layers.size()) {
        throw AggregationError("layer count mismatch: " + first + " has " +
                               std::to_string(*layers) + " layers, " + where + " has " +
                               std::to_string(p.layers.size()));
      }
    }
  }
}

}  // namespace

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw PreconditionError("quartiles of an empty set");
  std::sort(values.begin(), values.end());
  const auto at = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
  };
  return {values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

RunData load_run(const fs::path& run_dir) {
  const auto artifacts = read_manifest(run_dir);
  RunData run;
  run.name = run_dir.filename().string();
  if (run.name.empty()) run.name = run_dir.parent_path().filename().string();
  auto read_json = [&](const std::string& name) { return json::parse(read_file(run_dir / name)); };

  for (const auto& a : artifacts) {
    const std::string& name = a.path;
    if (starts_with(name, "layer_profile_") && ends_with(name, ".json")) {
      LayerProfile p = layer_profile_from_json(read_json(name));
      run.layer_profiles[between(name, "layer_profile_", ".json")] = std::move(p);
    } else if (starts_with(name, "focus_") && ends_with(name, ".json")) {
      std::vector<FocusSample> samples;
      const json j = read_json(name);
      for (const auto& s : j.at("samples")) {
        samples.push_back({s.at("input_id").get<std::string>(),
                           s.at("clause_id").get<std::string>(), s.at("similarity").get<double>(),
                           s.at("effect").get<double>()});
      }
      run.focus[between(name, "focus_", ".json")] = std::move(samples);
    } else if (name == "metrics.json") {
      const json m = read_json(name);
      run.model = m.at("model").get<std::string>();
      run.seed = m.at("seed").get<std::uint64_t>();
      run.correlation = parse_correlation_kind(m.at("correlation").get<std::string>());
      run.correlation_mode = parse_correlation_mode(m.at("correlation_mode").get<std::string>());
    } else if (name == "detection.json") {
      const json j = read_json(name);
      for (const auto& s : j.at("settings")) {
        run.detection_rates[s.at("setting").get<std::string>()] = s.at("rate").get<double>();
      }
    } else if (name == "benchmark.json") {
      const json j = read_json(name);
      for (const auto& s : j.at("settings")) {
        run.benchmark_scores[s.at("setting").get<std::string>()] = s.at("score").get<double>();
      }
    } else if (name == "timing.json") {
      const json j = read_json(name);
      for (const auto& s : j.at("settings")) {
        const std::string id = s.at("setting").get<std::string>();
        if (s.contains("latency_total_ms")) {
          run.latency_total_ms[id] = s["latency_total_ms"].get<double>();
          run.latency_mean_ms[id] = s["latency_mean_ms"].get<double>();
        }
        if (s.contains("benchmark_total_ms")) {
          run.benchmark_total_ms[id] = s["benchmark_total_ms"].get<double>();
        }
      }
    }
  }
  if (run.model.empty()) throw RunError("run " + run_dir.string() + " has no metrics.json");
  return run;
}

std::vector<ReportFile> build_report(std::span<const RunData> runs) {
  if (runs.empty()) throw PreconditionError("report: no runs");
  std::set<std::string> names;
  for (const auto& r : runs) {
    if (!names.insert(r.name).second) {
      throw AggregationError("report: duplicate run name '" + r.name + "'");
    }
  }
  check_layer_counts(runs);

  std::vector<RatePair> published_rates;
  for (const auto& p : published::kModels) {
    published_rates.push_back({std::string(p.model), p.detection_rate.fc, p.detection_rate.prompt});
  }
  ordered_json report;
  report["kind"] = "report";
  report["runs"] = ordered_json::array();
  for (const auto& r : runs) report["runs"].push_back({{"run", r.name}, {"model", r.model}});
  report["improvement"]["headline"] = published::kHeadlineImprovement;
  report["improvement"]["from_published_rates"] = improvement_json(improvement_ratio(published_rates));

  std::vector<RatePair> local_rates;
  for (const auto& r : runs) {
    const auto fc = lookup(r.detection_rates, "fc");
    const auto prompt = lookup(r.detection_rates, "prompt");
    if (fc && prompt) local_rates.push_back({r.name, *fc, *prompt});
  }
  if (!local_rates.empty()) {
    try {
      report["improvement"]["from_local_runs"] = improvement_json(improvement_ratio(local_rates));
    } catch (const PreconditionError& e) {
      report["improvement"]["from_local_runs"] = {{"error", e.what()}};
    }
  }

  return {
      {"table2_sdc_ad.csv", table2(runs)},
      {"table3_detection.csv", table3(runs)},
      {"table4_overhead.csv", table4(runs)},
      {"layer_distribution.csv", layer_distribution(runs)},
      {"focus_scatter.csv", focus_scatter(runs)},
      {"focus_correlation.csv", focus_correlations(runs)},
      {"report.json", report.dump(2) + "\n"},
  };
}

std::vector<ReportFile> write_report(std::span<const fs::path> run_dirs, const fs::path& out_dir) {
  std::vector<RunData> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  auto files = build_report(runs);
  fs::create_directories(out_dir);
  for (const auto& f : files) write_file(out_dir / f.name, f.contents);
  return files;
}

}  // namespace fccausal
