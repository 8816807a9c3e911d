#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fccausal/model_backend.hpp"

namespace fccausal {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;

struct ReferenceConfig {
  int vocab_size = 256;
  int layer_count = 4;
  int width = 32;
  int heads = 2;
  int mlp_ratio = 4;
  int context_length = 16384;
  int eos_token = 0;
  std::uint64_t seed = 0;
  // Blocks whose weights are all zero: pure residual pass-through.
  std::vector<int> identity_layers;

  void validate() const;
};

// Weights of one pre-LayerNorm transformer block.
struct BlockWeights {
  RowVector ln1_gain, ln1_bias;
  Matrix qkv;  // width x 3*width
  RowVector qkv_bias;
  Matrix attn_out;  // width x width
  RowVector attn_out_bias;
  RowVector ln2_gain, ln2_bias;
  Matrix mlp_in;  // width x mlp_ratio*width
  RowVector mlp_in_bias;
  Matrix mlp_out;  // mlp_ratio*width x width
  RowVector mlp_out_bias;
};

// Byte-level decoder-only transformer with seeded random weights. Small
// enough to run every intervention exhaustively on a CPU, and open enough
// to rebuild without a layer for oracle checks.
class ReferenceModel final : public ModelBackend {
 public:
  // Called after each block with the block's input and output residual
  // streams (T x width). The hook may overwrite `out`.
  using PostLayerHook = std::function<void(int layer, const Matrix& in, Matrix& out)>;

  static ReferenceModel build(const ReferenceConfig& config);
  static ReferenceModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // A copy whose block list omits `layer`.
  ReferenceModel without_layer(int layer) const;

  const std::string& identity() const override { return identity_; }
  int layer_count() const override { return static_cast<int>(blocks_.size()); }
  int vocab_size() const override { return config_.vocab_size; }
  std::size_t context_length() const override {
    return static_cast<std::size_t>(config_.context_length);
  }

  TokenSequence tokenize(std::string_view text) const override;
  std::string detokenize(std::span<const int> tokens) const override;

  LogitsVector forward(const TokenSequence& input,
                       std::optional<int> skip_layer = std::nullopt) override;
  LogitsVector forward_hooked(const TokenSequence& input, const PostLayerHook& hook);
  std::string generate(std::string_view rendered_prompt) override;

  const ReferenceConfig& config() const { return config_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }

 private:
  struct LayerCache {
    Matrix keys;    // positions x width
    Matrix values;  // positions x width
  };

  ReferenceModel() = default;

  // Visits every tensor in serialization order as (name, tensor).
  template <typename Self, typename Fn>
  static void visit_tensors(Self& self, Fn&& fn);

  // Runs new rows at positions [cache_len, cache_len + n) through every
  // block, appending to the caches, and returns the final-row logits.
  LogitsVector run(std::span<const int> tokens, std::size_t first_position,
                   std::vector<LayerCache>& caches, const PostLayerHook* hook);
  Matrix block_forward(const BlockWeights& w, const Matrix& x, std::size_t first_position,
                       LayerCache& cache) const;
  int pick_token(const LogitsVector& logits, std::mt19937_64& rng) const;

  ReferenceConfig config_;
  std::string identity_;
  Matrix token_embedding_;     // vocab x width
  Matrix position_embedding_;  // context x width
  std::vector<BlockWeights> blocks_;
  RowVector final_gain_, final_bias_;
  Matrix lm_head_;  // width x vocab
};

}  // namespace fccausal
