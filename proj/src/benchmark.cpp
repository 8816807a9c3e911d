#include "fccausal/benchmark.hpp"

#include <cctype>
#include <chrono>

#include <json.hpp>

#include "fccausal/errors.hpp"
#include "fccausal/io_util.hpp"
#include "fccausal/worker_pool.hpp"

namespace fccausal {
namespace {

bool is_word_byte(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::optional<std::size_t> letter_index(char c, std::size_t option_count) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u < 'A' || u > 'Z') return std::nullopt;
  const auto i = static_cast<std::size_t>(u - 'A');
  if (i >= option_count) return std::nullopt;
  return i;
}

// A letter standing alone: not glued to other word characters.
std::optional<std::size_t> lone_letter_at(std::string_view s, std::size_t pos,
                                          std::size_t option_count) {
  if (pos >= s.size()) return std::nullopt;
  if (pos > 0 && is_word_byte(s[pos - 1])) return std::nullopt;
  if (pos + 1 < s.size() && is_word_byte(s[pos + 1])) return std::nullopt;
  return letter_index(s[pos], option_count);
}

std::size_t skip_spaces(std::string_view s, std::size_t pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n')) ++pos;
  return pos;
}

}  // namespace

char choice_letter(std::size_t index) {
  if (index >= kMaxChoices) throw RangeError("choice index beyond Z");
  return static_cast<char>('A' + index);
}

std::vector<ChoiceItem> parse_choice_items(std::string_view text) {
  std::vector<ChoiceItem> items;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw SchemaError("line " + std::to_string(line_no) + ": not a JSON object", "", line_no);
    }
    auto need_string = [&](const char* field) {
      if (!j.contains(field) || !j[field].is_string()) {
        throw SchemaError("line " + std::to_string(line_no) + ": field '" + field +
                              "' missing or not a string",
                          field, line_no);
      }
      return j[field].get<std::string>();
    };
    ChoiceItem item;
    item.id = need_string("id");
    item.question = need_string("question");
    if (!j.contains("options") || !j["options"].is_array() || j["options"].size() < 2 ||
        j["options"].size() > kMaxChoices) {
      throw SchemaError("line " + std::to_string(line_no) + ": 'options' must list 2 to 26 strings",
                        "options", line_no);
    }
    for (const auto& o : j["options"]) {
      if (!o.is_string()) {
        throw SchemaError("line " + std::to_string(line_no) + ": option is not a string",
                          "options", line_no);
      }
      item.options.push_back(o.get<std::string>());
    }
    const auto bad_answer = [&] {
      return SchemaError("line " + std::to_string(line_no) + ": 'answer' must name an option",
                         "answer", line_no);
    };
    if (!j.contains("answer")) throw bad_answer();
    const auto& a = j["answer"];
    if (a.is_number_unsigned()) {
      item.answer = a.get<std::size_t>();
    } else if (a.is_string() && a.get<std::string>().size() == 1) {
      const auto idx = letter_index(a.get<std::string>()[0], item.options.size());
      if (!idx) throw bad_answer();
      item.answer = *idx;
    } else {
      throw bad_answer();
    }
    if (item.answer >= item.options.size()) throw bad_answer();
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<ChoiceItem> load_choice_items(const std::filesystem::path& path) {
  return parse_choice_items(read_file(path));
}

std::string render_choice_question(const ChoiceItem& item) {
  std::string out = item.question + "\n";
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    out += choice_letter(i);
    out += ". " + item.options[i] + "\n";
  }
  out += "Answer with the letter of the correct option.";
  return out;
}

std::optional<std::size_t> extract_choice(std::string_view output, std::size_t option_count) {
  std::string lower(output);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  for (std::string_view cue : {"answer is", "answer:"}) {
    for (auto pos = lower.find(cue); pos != std::string::npos; pos = lower.find(cue, pos + 1)) {
      std::size_t p = skip_spaces(output, pos + cue.size());
      if (p < output.size() && output[p] == '(') ++p;
      if (auto idx = lone_letter_at(output, p, option_count)) return idx;
    }
  }
  for (std::size_t p = output.find('('); p != std::string_view::npos;
       p = output.find('(', p + 1)) {
    if (p + 2 < output.size() && output[p + 2] == ')') {
      if (auto idx = letter_index(output[p + 1], option_count)) return idx;
    }
  }
  return lone_letter_at(output, skip_spaces(output, 0), option_count);
}

BenchmarkResult run_benchmark(const ModelFactory& factory, std::span<const ChoiceItem> items,
                              const Setting& setting, int workers, std::uint64_t seed) {
  if (items.empty()) throw PreconditionError("run_benchmark: no items");
  BenchmarkResult result;
  result.setting = setting.id();
  result.outcomes.resize(items.size());
  parallel_over_models(factory, items.size(), workers, [&](ModelBackend& model, std::size_t i) {
    const std::string prompt = render_prompt(model, setting, render_choice_question(items[i]));
    model.reseed(seed + i);
    const auto t0 = std::chrono::steady_clock::now();
    const std::string reply = model.generate(prompt);
    const auto t1 = std::chrono::steady_clock::now();
    ChoiceOutcome& o = result.outcomes[i];
    o.item_id = items[i].id;
    o.chosen = extract_choice(reply, items[i].options.size());
    o.correct = o.chosen == items[i].answer;
    o.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  });
  std::size_t correct = 0;
  for (const auto& o : result.outcomes) {
    correct += o.correct ? 1 : 0;
    result.total_ms += o.latency_ms;
  }
  result.score = static_cast<double>(correct) / static_cast<double>(items.size());
  return result;
}

}  // namespace fccausal
