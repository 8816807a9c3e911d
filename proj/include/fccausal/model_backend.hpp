#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fccausal {

// Tokenized text. offsets[i] is the [start, end) byte range of tokens[i]
// in source_text.
struct TokenSequence {
  std::vector<int> tokens;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
  std::string source_text;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

// Pre-softmax next-token scores at one sequence position.
struct LogitsVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool all_finite() const;
};

// Byte-level tokenizer: one token per UTF-8 byte, ids 0..255.
struct ByteTokenizer {
  static TokenSequence tokenize(std::string_view text);
  static std::string detokenize(std::span<const int> tokens);
};

struct DecodeParams {
  double temperature = 0.0;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;
};

// A chat turn before template rendering. tools holds the serialized
// function specifications (empty when the setting has none).
struct ChatPrompt {
  std::string system;
  std::string tools;
  std::string user;
};

inline constexpr std::string_view kSystemMarker = "<|system|>";
inline constexpr std::string_view kToolsMarker = "<|tools|>";
inline constexpr std::string_view kUserMarker = "<|user|>";
inline constexpr std::string_view kAssistantMarker = "<|assistant|>";

// Uniform interface over a transformer language model. Every intervention
// is expressed against this contract; external adapters implement it too.
//
// A handle serves one call at a time. Parallel callers use independent
// handles obtained from a ModelFactory.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual const std::string& identity() const = 0;
  virtual int layer_count() const = 0;
  virtual int vocab_size() const = 0;
  virtual std::size_t context_length() const = 0;

  // Adapters that cannot expose logits return false; intervention
  // operations refuse them with CapabilityError.
  virtual bool logits_capability() const { return true; }

  virtual TokenSequence tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(std::span<const int> tokens) const = 0;

  // Next-token logits at the final input position. With skip_layer = l the
  // block at index l is bypassed and its input feeds block l + 1 directly.
  // Throws PreconditionError on empty input, RangeError on a bad index.
  virtual LogitsVector forward(const TokenSequence& input,
                               std::optional<int> skip_layer = std::nullopt) = 0;

  // Greedy decode at temperature 0, seeded sampling otherwise. Stops at the
  // end token or decode().max_new_tokens. Throws CapacityError when the
  // prompt does not fit the context budget.
  virtual std::string generate(std::string_view rendered_prompt) = 0;

  // Chat template. The default is a plain-text layout with the marker
  // constants above; model families override it.
  virtual std::string render_chat(const ChatPrompt& prompt) const;

  // Transcodes a model-specific tool-call surface form into the canonical
  // {"name": ..., "arguments": {...}} JSON block.
  virtual std::string canonicalize_tool_call(std::string_view raw_output) const {
    return std::string(raw_output);
  }

  // Reseeds any stochastic component (sampling, noisy adapters).
  virtual void reseed(std::uint64_t seed) { decode_.seed = seed; }

  const DecodeParams& decode() const { return decode_; }
  void set_decode(const DecodeParams& params);

 protected:
  // Shared precondition checks for forward().
  void validate_forward(const TokenSequence& input, std::optional<int> skip_layer) const;

  DecodeParams decode_;
};

using ModelFactory = std::function<std::unique_ptr<ModelBackend>()>;

}  // namespace fccausal
