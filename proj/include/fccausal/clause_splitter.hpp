#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fccausal {

// A contiguous span of the source text: [char_start, char_end) in bytes.
struct Clause {
  std::string clause_id;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string text;

  bool operator==(const Clause&) const = default;
};

struct SplitOptions {
  // Fragments with fewer words merge into a neighbour in the same sentence.
  int min_words = 3;
};

class ClauseSplitter {
 public:
  virtual ~ClauseSplitter() = default;
  virtual std::vector<Clause> split(std::string_view text) const = 0;
};

// Splits at . , ; : ! ? and newline. Sentence terminators (. ! ? newline)
// are hard boundaries; short fragments between soft delimiters (, ; :)
// merge into the preceding fragment of the same sentence, or into the
// following one when they open the sentence. A punctuation character only
// delimits when followed by whitespace, another delimiter or end of text,
// so "3.14" and "a,b" stay whole.
class PunctuationSplitter final : public ClauseSplitter {
 public:
  explicit PunctuationSplitter(SplitOptions options = {}) : options_(options) {}
  std::vector<Clause> split(std::string_view text) const override;

 private:
  SplitOptions options_;
};

std::vector<Clause> split_clauses(std::string_view text, const SplitOptions& options = {});

// Replaces the clause span with `mask`. Throws ConsistencyError when the
// span is out of bounds or the text under it differs from clause.text.
std::string mask_clause(std::string_view text, const Clause& clause, std::string_view mask = "-");

// True when every byte is whitespace or a clause delimiter character.
bool is_delimiter_gap(std::string_view gap);

}  // namespace fccausal
