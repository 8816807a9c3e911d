#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fccausal/intervention.hpp"
#include "fccausal/metrics.hpp"

namespace fccausal {

// Everything a report needs from one completed run directory.
struct RunData {
  std::string name;  // directory name
  std::string model;
  std::uint64_t seed = 0;
  CorrelationKind correlation = CorrelationKind::kPearson;
  CorrelationMode correlation_mode = CorrelationMode::kPooled;
  std::map<std::string, LayerProfile> layer_profiles;       // by setting id
  std::map<std::string, std::vector<FocusSample>> focus;    // by setting id
  std::map<std::string, double> detection_rates;            // by setting id
  std::map<std::string, double> benchmark_scores;           // by setting id
  std::map<std::string, double> latency_total_ms;           // detection, by setting id
  std::map<std::string, double> latency_mean_ms;            // detection, by setting id
  std::map<std::string, double> benchmark_total_ms;         // by setting id
};

// Reads a completed run directory (one with a manifest). Throws RunError
// otherwise.
RunData load_run(const std::filesystem::path& run_dir);

struct ReportFile {
  std::string name;
  std::string contents;
};

// Quartiles with linear interpolation between order statistics.
struct Quartiles {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

Quartiles quartiles(std::vector<double> values);

// Builds every report table. AD and SDC are recomputed from the profiles.
// Runs whose profiles disagree on layer count throw AggregationError.
std::vector<ReportFile> build_report(std::span<const RunData> runs);

// load_run for each directory, build_report, then write into out_dir.
std::vector<ReportFile> write_report(std::span<const std::filesystem::path> run_dirs,
                                     const std::filesystem::path& out_dir);

}  // namespace fccausal
