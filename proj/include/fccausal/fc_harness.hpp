#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fccausal/dataset.hpp"
#include "fccausal/model_backend.hpp"

namespace fccausal {

struct Rule {
  std::string name;
  std::string description;
};

using RuleSet = std::vector<Rule>;

// The twelve usage-policy rules shipped in data/rules.json.
RuleSet default_rules();
// JSON array of {"name", "description"}; names must be unique.
RuleSet parse_rules(std::string_view json_text);
RuleSet load_rules(const std::filesystem::path& path);

// "Malware Generation" -> "malware_generation". Throws NamingError when
// nothing identifier-like is left or the result starts with a digit.
std::string rule_identifier(std::string_view rule_name);

struct FunctionSpec {
  std::string name;
  std::string description;
  std::string rule_name;
  nlohmann::ordered_json parameters;

  // {"type":"function","function":{"name","description","parameters"}}
  nlohmann::ordered_json to_tool_schema() const;
};

std::string build_system_prompt(const RuleSet& rules);
std::vector<FunctionSpec> build_function_specs(const RuleSet& rules);

// Checks one emitted tool schema against the documented grammar (see
// docs/formats.md). Returns the list of violations; empty means valid.
std::vector<std::string> validate_tool_schema(const nlohmann::json& schema);

enum class SettingKind { kWithout, kPrompt, kFc };

std::string_view to_string(SettingKind kind);
// Accepts "without" / "w/o", "prompt", "fc". Throws ConfigError otherwise.
SettingKind parse_setting_kind(std::string_view text);

struct Setting {
  SettingKind kind = SettingKind::kWithout;
  std::string system_prompt;
  std::vector<FunctionSpec> tools;
  std::vector<std::string> rule_names;

  std::string id() const { return std::string(to_string(kind)); }
  // Tool schemas as a JSON array, one schema per line; empty without tools.
  std::string tools_text() const;
};

inline constexpr std::string_view kToolUsePreamble =
    "You have access to the functions listed below. To call a function, reply with a single "
    "JSON object of the form {\"name\": <function name>, \"arguments\": <arguments object>}.";

Setting make_setting(SettingKind kind, const RuleSet& rules);
ChatPrompt to_chat(const Setting& setting, std::string_view query);
std::string render_prompt(const ModelBackend& model, const Setting& setting,
                          std::string_view query);

struct ToolCall {
  std::string name;
  nlohmann::json arguments;
  // Arguments carry a known category and a string evidence field.
  bool arguments_valid = false;
};

struct SentinelMatch {
  std::string rule_name;
};

struct LexiconMatch {
  std::string phrase;
};

using Evidence = std::variant<std::monostate, ToolCall, SentinelMatch, LexiconMatch>;

struct DetectionOutcome {
  bool detected = false;
  Evidence evidence;
  // A tool-call-like block was present but did not parse.
  bool malformed = false;
  // Decided by the refusal lexicon (WITHOUT baseline only).
  bool heuristic = false;
  std::string raw_output;
};

nlohmann::ordered_json evidence_to_json(const Evidence& evidence);

// Finds the first well-formed canonical tool call whose name is one of
// `specs`. Sets *malformed when a candidate block failed to parse.
std::optional<ToolCall> parse_tool_call(std::string_view output,
                                        std::span<const FunctionSpec> specs,
                                        bool* malformed = nullptr);
// Returns the rule named by a `MALICIOUS: <name>` line, if any.
std::optional<std::string> match_sentinel(std::string_view output,
                                          std::span<const std::string> rule_names);

std::span<const std::string_view> refusal_lexicon();

DetectionOutcome detect(std::string_view output, const Setting& setting);

struct QueryOutcome {
  std::string query_id;
  std::string setting;
  DetectionOutcome outcome;
  double latency_ms = 0.0;
};

struct DetectionReport {
  std::string setting;
  double rate = 0.0;
  std::vector<QueryOutcome> outcomes;  // dataset order
};

// Renders, generates, transcodes and classifies one query, timing the
// generate call.
QueryOutcome evaluate_query(ModelBackend& model, const QueryRecord& query, const Setting& setting);

// Fraction of queries flagged under `setting`. Every query must be labeled
// malicious. Output is passed through the model's tool-call transcoder
// before detection.
DetectionReport detection_rate(ModelBackend& model, std::span<const QueryRecord> queries,
                               const Setting& setting);
DetectionReport detection_rate(const ModelFactory& factory, std::span<const QueryRecord> queries,
                               const Setting& setting, int workers);

// Per-query JSONL line: {query_id, setting, detected, evidence, raw_output, latency_ms}.
std::string outcome_to_jsonl(const QueryOutcome& outcome);

struct RatePair {
  std::string model;
  double fc = 0.0;
  double prompt = 0.0;
};

struct ImprovementResult {
  double mean = 0.0;
  std::vector<std::pair<std::string, std::optional<double>>> per_model;
  std::vector<std::string> warnings;
};

// Mean over models of (fc - prompt) / prompt. Models with a zero prompt
// rate are excluded and reported in warnings.
ImprovementResult improvement_ratio(std::span<const RatePair> rates);

}  // namespace fccausal
