#pragma once

// Small deterministic pre-norm decoder-only transformer with grouped-query
// attention. Activations are d x n matrices, one column per position.
//
// Block k:
//   y   = Attention_k(RMSNorm(x))          (or W_k x + b_k when linearized)
//   x  += y
//   x  += MLP_k(RMSNorm(x))
//
// Captures record the residual stream x entering the attention sublayer and
// the sublayer output y before the residual add.

#include "nbl/common.hpp"
#include "nbl/lmmse.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace nbl::toy {

using TokenId = std::uint32_t;

struct ToyConfig {
  std::uint32_t layers = 8;      // K
  std::uint32_t width = 64;      // d
  std::uint32_t heads = 4;       // h
  std::uint32_t kv_groups = 2;   // g
  std::uint32_t ffn_width = 256;
  std::uint32_t vocab = 256;
  std::uint32_t max_context = 128;
  std::uint64_t seed = 0;

  std::uint32_t head_dim() const { return width / heads; }
  std::uint32_t kv_width() const { return head_dim() * kv_groups; }

  // Throws ValidationError naming the violated constraint.
  void validate() const;

  bool operator==(const ToyConfig&) const = default;
};

enum class LayerKind : std::uint8_t { kAttention = 0, kLinearized = 1 };

struct Block {
  LayerKind kind = LayerKind::kAttention;
  // Projections are stored in x out and applied as W^T * x.
  Vector attn_norm;
  Matrix wq;  // d x d
  Matrix wk;  // d x kv_width
  Matrix wv;  // d x kv_width
  Matrix wo;  // d x d
  Vector mlp_norm;
  Matrix w_up;    // d x ffn
  Matrix w_down;  // ffn x d
  std::optional<lmmse::LinearMap> linear;
};

struct CapturedLayer {
  Matrix input;   // X, d x tokens
  Matrix output;  // Y, d x tokens
};

using CaptureSet = std::map<LayerIndex, CapturedLayer>;

struct ForwardResult {
  Matrix logits;  // positions x vocab
  CaptureSet captures;
  double max_softmax_row_error = 0.0;  // max |sum(row) - 1| over all attention rows
};

class ToyTransformer {
 public:
  ToyTransformer() = default;
  explicit ToyTransformer(ToyConfig config);

  const ToyConfig& config() const { return config_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<Block>& blocks() { return blocks_; }

  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // max_context x d
  Vector final_norm;
  Matrix unembedding;  // d x vocab

  ForwardResult forward(std::span<const TokenId> tokens,
                        const std::set<LayerIndex>& capture = {}) const;

  // Attention sublayer (norm -> attention -> output projection) of block k on
  // an arbitrary residual-stream input. Linearized blocks apply their map.
  // When given, max_row_error is raised to the worst |sum(softmax row) - 1|.
  Matrix attention_sublayer(LayerIndex layer, const Matrix& x,
                            double* max_row_error = nullptr) const;

  std::vector<LayerIndex> linearized_layers() const;

 private:
  ToyConfig config_;
  std::vector<Block> blocks_;
};

// Weights are drawn from mt19937_64 seeded with config.seed, as 53-bit uniform
// values on [-sqrt(3), sqrt(3)) (unit variance) scaled by 1/sqrt(fan_in).
// Draw order: token embedding, position embedding, then per block wq, wk, wv,
// wo, w_up, w_down, then unembedding; each row-major. Norm scales start at 1.
// Embedding tables are one-hot lookups, so their fan_in is vocab and
// max_context respectively.
ToyTransformer init_random(const ToyConfig& config);

// Copy of `model` with each listed layer replaced by the matching map.
ToyTransformer substitute(const ToyTransformer& model, std::span<const LayerIndex> layers,
                          std::span<const lmmse::LinearMap> maps);

struct Drift {
  double mean_kl = 0.0;
  double max_abs = 0.0;
};

// KL(softmax(a) || softmax(b)) averaged over positions, and max |logit_a - logit_b|.
Drift logit_drift(const ToyTransformer& a, const ToyTransformer& b,
                  std::span<const TokenId> tokens);
Drift logit_drift(const Matrix& logits_a, const Matrix& logits_b);

// exp(mean next-token cross entropy).
double perplexity(const ToyTransformer& model, std::span<const TokenId> tokens);
double perplexity(const Matrix& logits, std::span<const TokenId> tokens);

// Binary model container, see model_file.cpp for the layout.
void save_model(const ToyTransformer& model, const std::filesystem::path& path);
ToyTransformer load_model(const std::filesystem::path& path);
std::vector<unsigned char> serialize_model(const ToyTransformer& model);
ToyTransformer deserialize_model(std::span<const unsigned char> bytes);

}  // namespace nbl::toy
