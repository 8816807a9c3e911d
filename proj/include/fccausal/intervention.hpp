#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fccausal/clause_splitter.hpp"
#include "fccausal/fc_harness.hpp"
#include "fccausal/model_backend.hpp"

namespace fccausal {

// Which logits an intervention compares.
enum class LogitsPosition {
  kFinalInput,      // next-token logits after the last input token
  kFirstGenerated,  // logits after appending the greedy first token
};

std::string_view to_string(LogitsPosition position);
LogitsPosition parse_logits_position(std::string_view text);

// Layer index or clause id.
using EffectTarget = std::variant<int, std::string>;

std::string target_to_string(const EffectTarget& target);

// One intervention outcome. ce_raw is the L2 logit displacement in model
// units; ce_norm is its per-input min-max normalization.
struct EffectRecord {
  std::string input_id;
  EffectTarget target;
  double ce_raw = 0.0;
  std::optional<double> ce_norm;
  std::string setting;
  std::uint64_t seed = 0;

  bool operator==(const EffectRecord&) const = default;
};

double l2_distance(const LogitsVector& a, const LogitsVector& b);

// Logits the engine compares, with an optional skipped layer.
LogitsVector observe(ModelBackend& model, const TokenSequence& input,
                     std::optional<int> skip_layer = std::nullopt,
                     LogitsPosition position = LogitsPosition::kFinalInput);

// ||M(i) - M'(i)||_2 with M' skipping `layer`.
double layer_effect(ModelBackend& model, const TokenSequence& input, int layer,
                    LogitsPosition position = LogitsPosition::kFinalInput);

// layer_effect for every layer, sharing the unmodified pass.
std::vector<double> layer_effects(ModelBackend& model, const TokenSequence& input,
                                  LogitsPosition position = LogitsPosition::kFinalInput);

// Mean of layer_effect over the dataset (raw CE). Empty dataset throws.
double layer_ace(ModelBackend& model, std::span<const TokenSequence> dataset, int layer,
                 LogitsPosition position = LogitsPosition::kFinalInput);

// (x - min) / (max - min). An all-equal vector throws DegenerateInputError.
std::vector<double> normalize_per_input(std::span<const double> values);

struct ScanInput {
  std::string id;
  std::string query;
};

struct InputFailure {
  std::string input_id;
  std::string message;

  bool operator==(const InputFailure&) const = default;
};

struct EngineOptions {
  LogitsPosition position = LogitsPosition::kFinalInput;
  std::uint64_t seed = 0;
  int workers = 1;
  // Record failing inputs in the profile instead of throwing.
  bool skip_failed_inputs = false;
};

struct LayerProfile {
  std::string model;
  std::string setting;
  std::uint64_t seed = 0;
  LogitsPosition position = LogitsPosition::kFinalInput;
  std::vector<int> layers;
  std::vector<std::string> input_ids;  // successful inputs, dataset order
  std::vector<EffectRecord> records;   // input-major: records[i * layers + l]
  std::vector<double> ace;             // mean ce_norm per layer
  std::vector<InputFailure> failures;

  const EffectRecord& at(std::size_t input, std::size_t layer) const {
    return records[input * layers.size() + layer];
  }
  std::vector<double> normalized_row(std::size_t input) const;
  std::vector<double> normalized_column(std::size_t layer) const;

  bool operator==(const LayerProfile&) const = default;
};

// Every (input, layer) effect under `setting`, normalized per input, with
// per-layer ACE. Backend failures are rethrown nested in InterventionError
// unless options.skip_failed_inputs is set.
LayerProfile layer_scan(ModelBackend& model, std::span<const ScanInput> dataset,
                        const Setting& setting, const EngineOptions& options = {});
LayerProfile layer_scan(const ModelFactory& factory, std::span<const ScanInput> dataset,
                        const Setting& setting, const EngineOptions& options = {});

// Recomputes ace from records' ce_norm.
std::vector<double> ace_from_records(const LayerProfile& profile);

nlohmann::ordered_json to_json(const LayerProfile& profile);
LayerProfile layer_profile_from_json(const nlohmann::json& j);
// Long form: input_id,target,ce_raw,ce_norm,setting,seed
std::string to_csv(std::span<const EffectRecord> records);

struct ClauseOptions {
  int repeats = 5;
  std::string mask = "-";
  LogitsPosition position = LogitsPosition::kFinalInput;
  std::uint64_t seed = 0;
};

struct ClauseEffect {
  double value = 0.0;
  int requested_repeats = 1;
  int effective_repeats = 1;
};

// Mean over paired inferences of ||M(i) - M(i \ c)||_2 where i \ c has the
// clause span replaced by the mask. At temperature 0 the repeats collapse
// to one pass. The query is rendered through `setting` when given.
ClauseEffect clause_effect(ModelBackend& model, std::string_view query, const Clause& clause,
                           const ClauseOptions& options = {},
                           const Setting* setting = nullptr);

struct ClauseProfile {
  std::string input_id;
  std::string setting;
  std::uint64_t seed = 0;
  std::string mask;
  std::vector<Clause> clauses;
  std::vector<EffectRecord> records;  // one per clause; ce_norm when >= 2 distinct values
  int effective_repeats = 1;

  bool operator==(const ClauseProfile&) const = default;
};

ClauseProfile clause_scan(ModelBackend& model, const ScanInput& input, const Setting& setting,
                          const ClauseOptions& options = {},
                          const ClauseSplitter& splitter = PunctuationSplitter());

nlohmann::ordered_json to_json(const ClauseProfile& profile);
ClauseProfile clause_profile_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const Clause& clause);

}  // namespace fccausal
