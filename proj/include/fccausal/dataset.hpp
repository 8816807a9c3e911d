#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fccausal {

enum class Label { kMalicious, kBenign };

std::string_view to_string(Label label);

struct QueryRecord {
  std::string id;
  std::string query;
  std::optional<std::string> core_objective;
  Label label = Label::kMalicious;

  bool operator==(const QueryRecord&) const = default;
};

struct LoadDiagnostic {
  std::size_t line = 0;  // 1-based
  std::string field;     // empty when the line is not valid JSON
  std::string message;
};

struct LoadResult {
  std::vector<QueryRecord> records;
  std::vector<LoadDiagnostic> diagnostics;
};

// Reads a JSONL dataset, one object per line:
//   {"id": str, "query": str, "label": "malicious"|"benign", "core_objective": str?}
// Blank lines are skipped. Malformed lines and duplicate ids become
// diagnostics; with strict = true the first one throws SchemaError instead.
LoadResult load_dataset(const std::filesystem::path& path, bool strict = false);
LoadResult parse_dataset(std::string_view text, bool strict = false);

void write_dataset(const std::filesystem::path& path, const std::vector<QueryRecord>& records);
std::string record_to_jsonl(const QueryRecord& record);

}  // namespace fccausal
