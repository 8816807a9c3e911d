#include "fccausal/model_backend.hpp"

#include <cmath>

#include "fccausal/errors.hpp"

namespace fccausal {

bool LogitsVector::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

TokenSequence ByteTokenizer::tokenize(std::string_view text) {
  TokenSequence seq;
  seq.source_text = std::string(text);
  seq.tokens.reserve(text.size());
  seq.offsets.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    seq.tokens.push_back(static_cast<unsigned char>(text[i]));
    seq.offsets.emplace_back(i, i + 1);
  }
  return seq;
}

std::string ByteTokenizer::detokenize(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  return out;
}

std::string ModelBackend::render_chat(const ChatPrompt& prompt) const {
  std::string out;
  if (!prompt.system.empty()) {
    out.append(kSystemMarker).append("\n").append(prompt.system).append("\n");
  }
  if (!prompt.tools.empty()) {
    out.append(kToolsMarker).append("\n").append(prompt.tools).append("\n");
  }
  out.append(kUserMarker).append("\n").append(prompt.user).append("\n");
  out.append(kAssistantMarker).append("\n");
  return out;
}

void ModelBackend::set_decode(const DecodeParams& params) {
  if (!(params.temperature >= 0.0)) {
    throw ConfigError("temperature must be >= 0");
  }
  if (params.max_new_tokens <= 0) {
    throw ConfigError("max_new_tokens must be positive");
  }
  decode_ = params;
}

void ModelBackend::validate_forward(const TokenSequence& input,
                                    std::optional<int> skip_layer) const {
  if (input.empty()) {
    throw PreconditionError("forward: input token sequence is empty");
  }
  if (skip_layer && (*skip_layer < 0 || *skip_layer >= layer_count())) {
    throw RangeError("forward: skip_layer " + std::to_string(*skip_layer) +
                     " outside [0, " + std::to_string(layer_count()) + ")");
  }
  if (input.size() > context_length()) {
    throw CapacityError("forward: input of " + std::to_string(input.size()) +
                            " tokens exceeds context budget of " +
                            std::to_string(context_length()),
                        context_length());
  }
}

}  // namespace fccausal
