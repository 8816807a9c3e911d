#include "fccausal/scripted_model.hpp"

#include "fccausal/errors.hpp"

namespace fccausal {

ScriptedModel::ScriptedModel(Options options) : options_(std::move(options)) {
  if (options_.layer_count <= 0 || options_.vocab_size <= 0) {
    throw ConfigError("scripted model dimensions must be positive");
  }
}

TokenSequence ScriptedModel::tokenize(std::string_view text) const {
  return ByteTokenizer::tokenize(text);
}

std::string ScriptedModel::detokenize(std::span<const int> tokens) const {
  return ByteTokenizer::detokenize(tokens);
}

LogitsVector ScriptedModel::forward(const TokenSequence& input, std::optional<int> skip_layer) {
  if (!options_.logits) {
    throw CapabilityError("model '" + options_.identity + "' does not expose logits");
  }
  validate_forward(input, skip_layer);
  return options_.logits(input, skip_layer);
}

std::string ScriptedModel::generate(std::string_view rendered_prompt) {
  ++generate_calls_;
  if (rendered_prompt.size() > options_.context_length) {
    throw CapacityError("generate: prompt exceeds context budget of " +
                            std::to_string(options_.context_length),
                        options_.context_length);
  }
  if (auto it = options_.canned.find(rendered_prompt); it != options_.canned.end()) {
    return it->second;
  }
  if (options_.responder) return options_.responder(rendered_prompt);
  return {};
}

namespace stubs {
namespace {

bool has_tools(std::string_view prompt) { return prompt.find(kToolsMarker) != std::string_view::npos; }
bool has_system(std::string_view prompt) {
  return prompt.find(kSystemMarker) != std::string_view::npos;
}

ScriptedModel with_responder(std::string identity, ScriptedModel::Responder responder) {
  ScriptedModel::Options o;
  o.identity = std::move(identity);
  o.responder = std::move(responder);
  return ScriptedModel(std::move(o));
}

constexpr std::string_view kBenignAnswer = "Sure, here is some general information on that topic.";

}  // namespace

ScriptedModel always_calls(std::string call, std::string identity) {
  return with_responder(std::move(identity), [call](std::string_view) { return call; });
}

ScriptedModel silent(std::string identity) {
  return with_responder(std::move(identity), [](std::string_view) { return std::string(); });
}

ScriptedModel fc_only(std::string call, std::string identity) {
  return with_responder(std::move(identity), [call](std::string_view prompt) {
    return has_tools(prompt) ? call : std::string(kBenignAnswer);
  });
}

ScriptedModel compliant(std::string call, std::string sentinel, std::string identity) {
  return with_responder(std::move(identity), [call, sentinel](std::string_view prompt) {
    if (has_tools(prompt)) return call;
    if (has_system(prompt)) return sentinel;
    return std::string(kBenignAnswer);
  });
}

}  // namespace stubs
}  // namespace fccausal
