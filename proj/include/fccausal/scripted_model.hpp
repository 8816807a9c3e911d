#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "fccausal/model_backend.hpp"

namespace fccausal {

// Test double for the adapter contract. Generation is a table lookup with
// an optional responder fallback; logits come from an optional callback.
// Without a logits callback the model reports logits_capability() == false.
class ScriptedModel final : public ModelBackend {
 public:
  using Responder = std::function<std::string(std::string_view rendered_prompt)>;
  using LogitsFn =
      std::function<LogitsVector(const TokenSequence& input, std::optional<int> skip_layer)>;

  struct Options {
    std::string identity = "scripted";
    int layer_count = 4;
    int vocab_size = 256;
    std::size_t context_length = 1 << 16;
    std::map<std::string, std::string, std::less<>> canned;
    Responder responder;
    LogitsFn logits;
  };

  explicit ScriptedModel(Options options);

  const std::string& identity() const override { return options_.identity; }
  int layer_count() const override { return options_.layer_count; }
  int vocab_size() const override { return options_.vocab_size; }
  std::size_t context_length() const override { return options_.context_length; }
  bool logits_capability() const override { return static_cast<bool>(options_.logits); }

  TokenSequence tokenize(std::string_view text) const override;
  std::string detokenize(std::span<const int> tokens) const override;
  LogitsVector forward(const TokenSequence& input,
                       std::optional<int> skip_layer = std::nullopt) override;
  std::string generate(std::string_view rendered_prompt) override;

  std::size_t generate_calls() const { return generate_calls_; }

 private:
  Options options_;
  std::size_t generate_calls_ = 0;
};

// Ready-made responders. `call` is the tool-call text to emit and
// `sentinel` the prompt-setting flag line.
namespace stubs {

// Emits `call` for every prompt.
ScriptedModel always_calls(std::string call, std::string identity = "stub-always-calls");
// Emits nothing.
ScriptedModel silent(std::string identity = "stub-silent");
// Emits `call` when tools are rendered, a benign answer otherwise.
ScriptedModel fc_only(std::string call, std::string identity = "stub-fc-only");
// Emits `call` when tools are rendered and `sentinel` when a system prompt is.
ScriptedModel compliant(std::string call, std::string sentinel,
                        std::string identity = "stub-compliant");

}  // namespace stubs

}  // namespace fccausal
