#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fccausal/intervention.hpp"

namespace fccausal {

// Sum over layers of |instructed[l] - baseline[l]|. Both vectors hold
// per-layer ACE over normalized CE.
double ad(std::span<const double> ace_instructed, std::span<const double> ace_baseline);

// Sum over layers of the population standard deviation of ce_norm across
// inputs. Needs at least two inputs.
double sdc(const LayerProfile& profile);
// Same, over an input-major matrix of normalized rows.
double sdc(std::span<const std::vector<double>> normalized_rows);

class SimilarityBackend {
 public:
  virtual ~SimilarityBackend() = default;
  // In [0, 1]; both arguments non-empty.
  virtual double similarity(std::string_view a, std::string_view b) const = 0;
};

// Cosine of L2-normalized term-frequency vectors over lowercased
// alphanumeric word tokens. Texts without word tokens score 0.
class TfCosineSimilarity final : public SimilarityBackend {
 public:
  double similarity(std::string_view a, std::string_view b) const override;
};

std::vector<std::string> word_tokens(std::string_view text);

double semantic_similarity(std::string_view clause_text, std::string_view core_objective);

enum class CorrelationKind { kPearson, kSpearman };
enum class CorrelationMode { kPooled, kPerInput };

std::string_view to_string(CorrelationKind kind);
std::string_view to_string(CorrelationMode mode);
CorrelationKind parse_correlation_kind(std::string_view text);
CorrelationMode parse_correlation_mode(std::string_view text);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

// Correlation between clause effects and their similarity to the core
// objective. Needs >= 3 pairs and non-zero variance on both sides.
double focus_correlation(std::span<const double> clause_effects,
                         std::span<const double> similarities,
                         CorrelationKind kind = CorrelationKind::kPearson);

struct FocusSample {
  std::string input_id;
  std::string clause_id;
  double similarity = 0.0;
  double effect = 0.0;  // normalized clause ACE
};

struct FocusResult {
  double correlation = 0.0;
  std::size_t pairs = 0;
  std::size_t inputs_used = 0;
};

// Pooled: one correlation over all samples. Per-input: mean of the
// correlations of inputs with enough non-degenerate pairs.
FocusResult focus_correlation(std::span<const FocusSample> samples, CorrelationKind kind,
                              CorrelationMode mode);

struct MetricReport {
  std::string setting;
  std::optional<std::string> baseline;  // setting the AD is measured against
  std::optional<double> ad;
  std::optional<double> sdc;
  std::optional<double> correlation;
};

nlohmann::ordered_json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

}  // namespace fccausal
