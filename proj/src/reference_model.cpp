#include "fccausal/reference_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "fccausal/errors.hpp"

namespace fccausal {
namespace {

constexpr float kLayerNormEps = 1e-5f;
constexpr std::string_view kWeightsFormat = "fccausal-reference-v1";

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const float mean = row.mean();
    const float var = (row.array() - mean).square().mean();
    const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
    out.row(r) = ((row.array() - mean) * inv * gain.array() + bias.array()).matrix();
  }
  return out;
}

void gelu_inplace(Matrix& x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
  x = x.unaryExpr([](float v) {
    return 0.5f * v * (1.0f + std::tanh(k * (v + 0.044715f * v * v * v)));
  });
}

nlohmann::json config_to_json(const ReferenceConfig& c) {
  return {{"vocab_size", c.vocab_size},     {"layer_count", c.layer_count},
          {"width", c.width},               {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},       {"context_length", c.context_length},
          {"eos_token", c.eos_token},       {"seed", c.seed},
          {"identity_layers", c.identity_layers}};
}

ReferenceConfig config_from_json(const nlohmann::json& j) {
  ReferenceConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.layer_count = j.at("layer_count").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.context_length = j.at("context_length").get<int>();
  c.eos_token = j.at("eos_token").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.identity_layers = j.at("identity_layers").get<std::vector<int>>();
  return c;
}

std::string make_identity(const ReferenceConfig& c) {
  std::string id = "reference-v" + std::to_string(c.vocab_size) + "-l" +
                   std::to_string(c.layer_count) + "-w" + std::to_string(c.width) + "-h" +
                   std::to_string(c.heads) + "-s" + std::to_string(c.seed);
  for (int l : c.identity_layers) id += "-id" + std::to_string(l);
  return id;
}

float to_host(float v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) |
           (bits >> 24);
    std::memcpy(&v, &bits, sizeof bits);
    return v;
  }
}

}  // namespace

template <typename Self, typename Fn>
void ReferenceModel::visit_tensors(Self& m, Fn&& fn) {
  fn(std::string("token_embedding"), m.token_embedding_);
  fn(std::string("position_embedding"), m.position_embedding_);
  for (std::size_t l = 0; l < m.blocks_.size(); ++l) {
    auto& b = m.blocks_[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    fn(p + "ln1_gain", b.ln1_gain);
    fn(p + "ln1_bias", b.ln1_bias);
    fn(p + "qkv", b.qkv);
    fn(p + "qkv_bias", b.qkv_bias);
    fn(p + "attn_out", b.attn_out);
    fn(p + "attn_out_bias", b.attn_out_bias);
    fn(p + "ln2_gain", b.ln2_gain);
    fn(p + "ln2_bias", b.ln2_bias);
    fn(p + "mlp_in", b.mlp_in);
    fn(p + "mlp_in_bias", b.mlp_in_bias);
    fn(p + "mlp_out", b.mlp_out);
    fn(p + "mlp_out_bias", b.mlp_out_bias);
  }
  fn(std::string("final_gain"), m.final_gain_);
  fn(std::string("final_bias"), m.final_bias_);
  fn(std::string("lm_head"), m.lm_head_);
}

void ReferenceConfig::validate() const {
  if (vocab_size <= 0 || layer_count <= 0 || width <= 0 || heads <= 0 || mlp_ratio <= 0 ||
      context_length <= 0) {
    throw ConfigError("reference model dimensions must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (eos_token < 0 || eos_token >= vocab_size) {
    throw ConfigError("eos_token outside vocabulary");
  }
  if (vocab_size < 256) {
    throw ConfigError("byte-level tokenizer needs vocab_size >= 256");
  }
  for (int l : identity_layers) {
    if (l < 0 || l >= layer_count) {
      throw ConfigError("identity layer " + std::to_string(l) + " out of range");
    }
  }
}

ReferenceModel ReferenceModel::build(const ReferenceConfig& config) {
  config.validate();
  ReferenceModel m;
  m.config_ = config;
  m.identity_ = make_identity(config);

  std::mt19937_64 rng(config.seed);
  auto gaussian = [&rng](Eigen::Index rows, Eigen::Index cols, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Matrix out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist(rng);
    return out;
  };
  const int w = config.width;
  const int hidden = config.mlp_ratio * w;

  m.token_embedding_ = gaussian(config.vocab_size, w, 1.0f);
  m.position_embedding_ = gaussian(config.context_length, w, 0.1f);
  for (int l = 0; l < config.layer_count; ++l) {
    BlockWeights b;
    b.ln1_gain = RowVector::Ones(w) + gaussian(1, w, 0.1f);
    b.ln1_bias = gaussian(1, w, 0.1f);
    b.qkv = gaussian(w, 3 * w, 1.0f / std::sqrt(static_cast<float>(w)));
    b.qkv_bias = gaussian(1, 3 * w, 0.02f);
    b.attn_out = gaussian(w, w, 1.0f / std::sqrt(static_cast<float>(w)));
    b.attn_out_bias = gaussian(1, w, 0.02f);
    b.ln2_gain = RowVector::Ones(w) + gaussian(1, w, 0.1f);
    b.ln2_bias = gaussian(1, w, 0.1f);
    b.mlp_in = gaussian(w, hidden, 1.0f / std::sqrt(static_cast<float>(w)));
    b.mlp_in_bias = gaussian(1, hidden, 0.02f);
    b.mlp_out = gaussian(hidden, w, 1.0f / std::sqrt(static_cast<float>(hidden)));
    b.mlp_out_bias = gaussian(1, w, 0.02f);
    // Draw first so identity layers do not shift the stream for later blocks.
    if (std::find(config.identity_layers.begin(), config.identity_layers.end(), l) !=
        config.identity_layers.end()) {
      for (Matrix* t : {&b.qkv, &b.attn_out, &b.mlp_in, &b.mlp_out}) t->setZero();
      for (RowVector* t : {&b.ln1_gain, &b.ln1_bias, &b.qkv_bias, &b.attn_out_bias,
                           &b.ln2_gain, &b.ln2_bias, &b.mlp_in_bias, &b.mlp_out_bias}) {
        t->setZero();
      }
    }
    m.blocks_.push_back(std::move(b));
  }
  m.final_gain_ = RowVector::Ones(w);
  m.final_bias_ = RowVector::Zero(w);
  m.lm_head_ = gaussian(w, config.vocab_size, 1.0f / std::sqrt(static_cast<float>(w)));
  return m;
}

ReferenceModel ReferenceModel::without_layer(int layer) const {
  if (layer < 0 || layer >= layer_count()) {
    throw RangeError("without_layer: index " + std::to_string(layer) + " out of range");
  }
  ReferenceModel copy = *this;
  copy.blocks_.erase(copy.blocks_.begin() + layer);
  copy.config_.layer_count = static_cast<int>(copy.blocks_.size());
  auto& ids = copy.config_.identity_layers;
  std::erase(ids, layer);
  for (int& l : ids) {
    if (l > layer) --l;
  }
  copy.identity_ = identity_ + "-minus" + std::to_string(layer);
  return copy;
}

TokenSequence ReferenceModel::tokenize(std::string_view text) const {
  return ByteTokenizer::tokenize(text);
}

std::string ReferenceModel::detokenize(std::span<const int> tokens) const {
  return ByteTokenizer::detokenize(tokens);
}

Matrix ReferenceModel::block_forward(const BlockWeights& w, const Matrix& x,
                                     std::size_t first_position, LayerCache& cache) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index width = config_.width;
  const Eigen::Index head_dim = width / config_.heads;
  const Eigen::Index total = static_cast<Eigen::Index>(first_position) + n;

  Matrix h = layer_norm(x, w.ln1_gain, w.ln1_bias);
  Matrix qkv = h * w.qkv;
  qkv.rowwise() += w.qkv_bias;

  cache.keys.conservativeResize(total, width);
  cache.values.conservativeResize(total, width);
  cache.keys.bottomRows(n) = qkv.middleCols(width, width);
  cache.values.bottomRows(n) = qkv.rightCols(width);

  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  Matrix attended(n, width);
  for (int head = 0; head < config_.heads; ++head) {
    const Eigen::Index c0 = head * head_dim;
    Matrix scores = (qkv.middleCols(c0, head_dim) *
                     cache.keys.middleCols(c0, head_dim).transpose()) *
                    scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index visible = static_cast<Eigen::Index>(first_position) + i + 1;
      auto row = scores.row(i);
      const float max = row.head(visible).maxCoeff();
      row.head(visible) = (row.head(visible).array() - max).exp().matrix();
      row.tail(total - visible).setZero();
      row /= row.head(visible).sum();
    }
    attended.middleCols(c0, head_dim) = scores * cache.values.middleCols(c0, head_dim);
  }

  Matrix x1 = attended * w.attn_out;
  x1.rowwise() += w.attn_out_bias;
  x1 += x;

  Matrix m = layer_norm(x1, w.ln2_gain, w.ln2_bias) * w.mlp_in;
  m.rowwise() += w.mlp_in_bias;
  gelu_inplace(m);
  Matrix out = m * w.mlp_out;
  out.rowwise() += w.mlp_out_bias;
  out += x1;
  return out;
}

LogitsVector ReferenceModel::run(std::span<const int> tokens, std::size_t first_position,
                                 std::vector<LayerCache>& caches, const PostLayerHook* hook) {
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  Matrix x(n, config_.width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= config_.vocab_size) {
      throw RangeError("token id " + std::to_string(t) + " outside vocabulary");
    }
    x.row(i) = token_embedding_.row(t) +
               position_embedding_.row(static_cast<Eigen::Index>(first_position) + i);
  }
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Matrix out = block_forward(blocks_[l], x, first_position, caches[l]);
    if (hook != nullptr) (*hook)(static_cast<int>(l), x, out);
    x = std::move(out);
  }
  Matrix last = layer_norm(x.bottomRows(1), final_gain_, final_bias_);
  Matrix scores = last * lm_head_;
  LogitsVector logits;
  logits.values.assign(scores.data(), scores.data() + scores.size());
  return logits;
}

LogitsVector ReferenceModel::forward(const TokenSequence& input, std::optional<int> skip_layer) {
  validate_forward(input, skip_layer);
  if (!skip_layer) {
    std::vector<LayerCache> caches(blocks_.size());
    return run(input.tokens, 0, caches, nullptr);
  }
  const int target = *skip_layer;
  return forward_hooked(input, [target](int layer, const Matrix& in, Matrix& out) {
    if (layer == target) out = in;
  });
}

LogitsVector ReferenceModel::forward_hooked(const TokenSequence& input,
                                            const PostLayerHook& hook) {
  validate_forward(input, std::nullopt);
  std::vector<LayerCache> caches(blocks_.size());
  return run(input.tokens, 0, caches, &hook);
}

int ReferenceModel::pick_token(const LogitsVector& logits, std::mt19937_64& rng) const {
  const auto& v = logits.values;
  if (decode_.temperature == 0.0) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }
  const double max = *std::max_element(v.begin(), v.end());
  std::vector<double> weights(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    weights[i] = std::exp((v[i] - max) / decode_.temperature);
  }
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng);
}

std::string ReferenceModel::generate(std::string_view rendered_prompt) {
  TokenSequence prompt = tokenize(rendered_prompt);
  const std::size_t budget = context_length();
  if (prompt.empty()) {
    throw PreconditionError("generate: empty prompt");
  }
  if (prompt.size() + static_cast<std::size_t>(decode_.max_new_tokens) > budget) {
    throw CapacityError("generate: prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                            std::to_string(decode_.max_new_tokens) +
                            " new tokens exceeds context budget of " + std::to_string(budget),
                        budget);
  }
  std::mt19937_64 rng(decode_.seed);
  std::vector<LayerCache> caches(blocks_.size());
  LogitsVector logits = run(prompt.tokens, 0, caches, nullptr);
  std::size_t position = prompt.size();
  std::vector<int> produced;
  for (int step = 0; step < decode_.max_new_tokens; ++step) {
    const int next = pick_token(logits, rng);
    if (next == config_.eos_token) break;
    produced.push_back(next);
    if (step + 1 == decode_.max_new_tokens) break;
    const int one[] = {next};
    logits = run(one, position, caches, nullptr);
    ++position;
  }
  return detokenize(produced);
}

void ReferenceModel::save(const std::filesystem::path& path) const {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  visit_tensors(*this, [&](const std::string& name, const auto& t) {
    tensors.push_back({{"name", name},
                       {"shape", {t.rows(), t.cols()}},
                       {"offset", offset}});
    offset += static_cast<std::size_t>(t.size());
  });
  nlohmann::json header = {{"format", kWeightsFormat},
                           {"dtype", "f32le"},
                           {"config", config_to_json(config_)},
                           {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  std::uint64_t len = text.size();
  unsigned char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  visit_tensors(*this, [&](const std::string&, const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const float v = to_host(t.data()[i]);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  });
  if (!out) throw Error("failed writing " + path.string());
}

ReferenceModel ReferenceModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weights file " + path.string());
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
  if (!in || len > (1u << 24)) throw Error("weights file has a corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  if (header.at("format").get<std::string>() != kWeightsFormat) {
    throw Error("unsupported weights format in " + path.string());
  }

  // Build for shapes, then overwrite every tensor from the file.
  ReferenceModel m = build(config_from_json(header.at("config")));
  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  visit_tensors(m, [&](const std::string& name, auto& t) {
    if (index >= tensors.size()) throw Error("weights file is missing tensor " + name);
    const auto& entry = tensors[index++];
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    if (entry.at("name").get<std::string>() != name || shape.size() != 2 ||
        shape[0] != t.rows() || shape[1] != t.cols()) {
      throw Error("weights file tensor mismatch at " + name);
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      t.data()[i] = to_host(v);
    }
  });
  if (!in) throw Error("weights file " + path.string() + " is truncated");
  return m;
}

}  // namespace fccausal
