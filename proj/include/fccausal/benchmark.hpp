#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fccausal/fc_harness.hpp"
#include "fccausal/model_backend.hpp"

namespace fccausal {

// One multiple-choice question. answer indexes options.
struct ChoiceItem {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  std::size_t answer = 0;

  bool operator==(const ChoiceItem&) const = default;
};

inline constexpr std::size_t kMaxChoices = 26;

// JSONL, one object per line:
//   {"id": str, "question": str, "options": [str, ...], "answer": "C" | 2}
// Throws SchemaError naming the field and line.
std::vector<ChoiceItem> parse_choice_items(std::string_view text);
std::vector<ChoiceItem> load_choice_items(const std::filesystem::path& path);

char choice_letter(std::size_t index);

// Question, lettered options and a one-letter answer instruction.
std::string render_choice_question(const ChoiceItem& item);

// Reads the chosen option from a free-text reply. Accepts "answer is X",
// "answer: X", "(X)" or a reply that starts with the letter. Letters beyond
// the option count are ignored.
std::optional<std::size_t> extract_choice(std::string_view output, std::size_t option_count);

struct ChoiceOutcome {
  std::string item_id;
  std::optional<std::size_t> chosen;
  bool correct = false;
  double latency_ms = 0.0;
};

struct BenchmarkResult {
  std::string setting;
  double score = 0.0;  // exact-match accuracy
  double total_ms = 0.0;
  std::vector<ChoiceOutcome> outcomes;  // item order
};

// Answers every item under `setting`, timing each generate call. Item i
// decodes with seed + i whichever worker serves it.
BenchmarkResult run_benchmark(const ModelFactory& factory, std::span<const ChoiceItem> items,
                              const Setting& setting, int workers = 1, std::uint64_t seed = 0);

}  // namespace fccausal
