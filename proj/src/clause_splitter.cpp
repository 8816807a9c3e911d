#include "fccausal/clause_splitter.hpp"

#include <algorithm>

#include "fccausal/errors.hpp"

namespace fccausal {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}
bool is_hard(char c) { return c == '.' || c == '!' || c == '?' || c == '\n'; }
bool is_soft(char c) { return c == ',' || c == ';' || c == ':'; }
bool is_punct_delim(char c) { return is_soft(c) || (is_hard(c) && c != '\n'); }

bool delimits_at(std::string_view text, std::size_t i) {
  const char c = text[i];
  if (c == '\n') return true;
  if (!is_punct_delim(c)) return false;
  if (i + 1 == text.size()) return true;
  const char next = text[i + 1];
  return is_space(next) || is_punct_delim(next);
}

int count_words(std::string_view s) {
  int words = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

struct Fragment {
  std::size_t start;
  std::size_t end;
  int words;
};

}  // namespace

std::vector<Clause> PunctuationSplitter::split(std::string_view text) const {
  // Group trimmed fragments by sentence.
  std::vector<std::vector<Fragment>> sentences(1);
  std::size_t seg_start = 0;
  auto close_segment = [&](std::size_t seg_end) {
    std::size_t a = seg_start, b = seg_end;
    while (a < b && is_space(text[a])) ++a;
    while (b > a && is_space(text[b - 1])) --b;
    if (a < b) sentences.back().push_back({a, b, count_words(text.substr(a, b - a))});
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!delimits_at(text, i)) continue;
    close_segment(i);
    seg_start = i + 1;
    if (is_hard(text[i]) && !sentences.back().empty()) sentences.emplace_back();
  }
  close_segment(text.size());

  std::vector<Clause> clauses;
  for (const auto& fragments : sentences) {
    std::vector<Fragment> merged;
    for (const Fragment& f : fragments) {
      if (f.words < options_.min_words && !merged.empty()) {
        merged.back().end = f.end;
        merged.back().words += f.words;
      } else {
        merged.push_back(f);
      }
    }
    if (merged.size() >= 2 && merged.front().words < options_.min_words) {
      merged[1].start = merged[0].start;
      merged[1].words += merged[0].words;
      merged.erase(merged.begin());
    }
    for (const Fragment& f : merged) {
      Clause c;
      c.clause_id = "c" + std::to_string(clauses.size());
      c.char_start = f.start;
      c.char_end = f.end;
      c.text = std::string(text.substr(f.start, f.end - f.start));
      clauses.push_back(std::move(c));
    }
  }
  return clauses;
}

std::vector<Clause> split_clauses(std::string_view text, const SplitOptions& options) {
  return PunctuationSplitter(options).split(text);
}

std::string mask_clause(std::string_view text, const Clause& clause, std::string_view mask) {
  if (clause.char_start > clause.char_end || clause.char_end > text.size()) {
    throw ConsistencyError("clause " + clause.clause_id + " span [" +
                           std::to_string(clause.char_start) + ", " +
                           std::to_string(clause.char_end) + ") outside text of length " +
                           std::to_string(text.size()));
  }
  if (text.substr(clause.char_start, clause.char_end - clause.char_start) != clause.text) {
    throw ConsistencyError("clause " + clause.clause_id + " was not derived from this text");
  }
  std::string out;
  out.reserve(text.size() - clause.text.size() + mask.size());
  out.append(text.substr(0, clause.char_start));
  out.append(mask);
  out.append(text.substr(clause.char_end));
  return out;
}

bool is_delimiter_gap(std::string_view gap) {
  return std::all_of(gap.begin(), gap.end(),
                     [](char c) { return is_space(c) || is_punct_delim(c) || c == '\n'; });
}

}  // namespace fccausal
