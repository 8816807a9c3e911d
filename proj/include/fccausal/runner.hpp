#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fccausal/dataset.hpp"
#include "fccausal/fc_harness.hpp"
#include "fccausal/intervention.hpp"
#include "fccausal/metrics.hpp"
#include "fccausal/model_backend.hpp"

namespace fccausal {

enum class Analysis { kLayer, kClause, kDetection, kBenchmark };

std::string_view to_string(Analysis analysis);
Analysis parse_analysis(std::string_view text);

// Mirrors the flat key=value config file; see docs/formats.md for keys.
struct RunConfig {
  std::string model = "reference";
  std::vector<SettingKind> settings = {SettingKind::kWithout, SettingKind::kPrompt,
                                       SettingKind::kFc};
  std::filesystem::path dataset;
  std::filesystem::path rules;  // empty: built-in rule set
  // Multiple-choice items for the overhead analysis ("benchmark").
  std::filesystem::path benchmark;
  std::size_t sample_size = 100;
  std::uint64_t seed = 0;
  int workers = 1;
  int repeats = 5;
  double temperature = 0.0;
  int max_new_tokens = 32;
  // Keep only inputs flagged under FC but missed under PROMPT.
  bool selective = false;
  std::vector<Analysis> analyses = {Analysis::kLayer, Analysis::kClause, Analysis::kDetection};
  LogitsPosition logits_position = LogitsPosition::kFinalInput;
  std::string mask = "-";
  int min_clause_words = 3;
  CorrelationKind correlation = CorrelationKind::kPearson;
  CorrelationMode correlation_mode = CorrelationMode::kPooled;
  std::filesystem::path out = "runs";
  std::string run_name = "run";
  bool overwrite = false;

  bool has(Analysis a) const;
  bool has(SettingKind k) const;
  // Range and consistency checks that need no files. Throws ConfigError.
  void validate() const;
};

// `key = value` lines; '#' starts a comment. Unknown keys, bad values and
// unknown setting kinds throw ConfigError naming the line.
RunConfig parse_config(std::string_view text);
// Relative dataset, rules, benchmark and out paths resolve against the
// config file's directory.
RunConfig load_config(const std::filesystem::path& path);
// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& config);

// Model specs:
//   reference                 bundled 4-layer model, weight seed 0
//   reference-seed:<n>        same architecture, weight seed n
//   reference-identity:<l>    layer l replaced by a zero block
//   weights:<path> | <path>.bin   saved reference weights
//   stub:always-calls | stub:silent | stub:fc-only | stub:compliant
// Stub tool calls and sentinels name the first rule in `rules`.
ModelFactory make_model_factory(std::string_view spec, const RuleSet& rules,
                                const DecodeParams& decode = {});

struct SelectionResult {
  std::vector<QueryRecord> selected;
  std::vector<std::string> scanned_ids;  // seeded scan order, up to the stop point
  std::optional<std::string> warning;    // set when fewer than k were found
};

// Seeded scan of the malicious candidates, keeping those detected under FC
// and missed under PROMPT until k are found or candidates run out.
SelectionResult selective_sample(ModelBackend& model, std::span<const QueryRecord> candidates,
                                 std::size_t k, std::uint64_t seed, const RuleSet& rules);

// Seeded uniform subset of size k, in draw order.
std::vector<QueryRecord> random_sample(std::span<const QueryRecord> candidates, std::size_t k,
                                       std::uint64_t seed);

struct ArtifactEntry {
  std::string path;  // relative to the run directory
  std::string kind;  // "analysis" or "timing"
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunResult {
  std::filesystem::path directory;
  std::vector<ArtifactEntry> artifacts;
  std::size_t queries = 0;
  std::size_t failed_queries = 0;
  std::vector<std::string> warnings;
};

// Share of failed queries above which a run is aborted.
inline constexpr double kMaxFailureShare = 0.10;

// Runs every configured analysis under every setting and writes the run
// directory atomically: it is staged next to the target and renamed into
// place only when complete. See docs/formats.md for the layout.
RunResult run_experiment(const RunConfig& config);
RunResult run_experiment(const RunConfig& config, const ModelFactory& factory);

// Reads manifest.json from a run directory.
std::vector<ArtifactEntry> read_manifest(const std::filesystem::path& run_dir);

}  // namespace fccausal
