#include "fccausal/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fccausal/errors.hpp"

namespace fccausal {

std::string_view to_string(Label label) {
  return label == Label::kMalicious ? "malicious" : "benign";
}

namespace {

std::string require_string(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw SchemaError("line " + std::to_string(line) + ": missing required field '" + field + "'",
                      field, line);
  }
  if (!it->is_string()) {
    throw SchemaError("line " + std::to_string(line) + ": field '" + field + "' must be a string",
                      field, line);
  }
  return it->get<std::string>();
}

QueryRecord parse_line(const std::string& text, std::size_t line) {
  nlohmann::json obj = nlohmann::json::parse(text, nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) {
    throw SchemaError("line " + std::to_string(line) + ": not a JSON object", "", line);
  }
  QueryRecord r;
  r.id = require_string(obj, "id", line);
  if (r.id.empty()) {
    throw SchemaError("line " + std::to_string(line) + ": field 'id' is empty", "id", line);
  }
  r.query = require_string(obj, "query", line);
  const std::string label = require_string(obj, "label", line);
  if (label == "malicious") {
    r.label = Label::kMalicious;
  } else if (label == "benign") {
    r.label = Label::kBenign;
  } else {
    throw SchemaError("line " + std::to_string(line) + ": field 'label' must be malicious or benign",
                      "label", line);
  }
  if (auto it = obj.find("core_objective"); it != obj.end() && !it->is_null()) {
    r.core_objective = require_string(obj, "core_objective", line);
  }
  return r;
}

}  // namespace

LoadResult parse_dataset(std::string_view text, bool strict) {
  LoadResult result;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      QueryRecord r = parse_line(line, number);
      if (!seen.insert(r.id).second) {
        throw SchemaError("line " + std::to_string(number) + ": duplicate id '" + r.id + "'", "id",
                          number);
      }
      result.records.push_back(std::move(r));
    } catch (const SchemaError& e) {
      if (strict) throw;
      result.diagnostics.push_back({e.line(), e.field(), e.what()});
    }
  }
  return result;
}

LoadResult load_dataset(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), strict);
}

std::string record_to_jsonl(const QueryRecord& record) {
  nlohmann::ordered_json obj;
  obj["id"] = record.id;
  obj["query"] = record.query;
  obj["label"] = std::string(to_string(record.label));
  if (record.core_objective) obj["core_objective"] = *record.core_objective;
  return obj.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

void write_dataset(const std::filesystem::path& path, const std::vector<QueryRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << record_to_jsonl(r) << '\n';
}

}  // namespace fccausal
