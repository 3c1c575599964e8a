// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pabdm/attention_masks.hpp"
#include "pabdm/types.hpp"

namespace pabdm {

struct ModelConfig {
  std::size_t vocab_size = 32;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t max_positions = 64;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t ffn_dim() const { return 4 * embed_dim; }
  /// Throws DomainError on zero counts or embed_dim % num_heads != 0.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Materialized context of one decoding session: the token at every absolute
/// position seen so far plus per-layer key/value rows. Append-only.
struct CacheState {
  std::size_t prompt_len = 0;
  TokenSeq tokens;
  std::vector<std::vector<float>> keys;    // per layer, length() x embed_dim
  std::vector<std::vector<float>> values;  // per layer, length() x embed_dim

  std::size_t length() const { return tokens.size(); }
  std::size_t response_length() const { return tokens.size() - prompt_len; }
  std::span<const Token> prompt() const { return {tokens.data(), prompt_len}; }
  std::span<const Token> response() const {
    return {tokens.data() + prompt_len, tokens.size() - prompt_len};
  }
};

struct ForwardOutput {
  std::size_t vocab = 0;
  std::vector<float> logits;  // rows = new positions, row-major
  CacheState new_cache;

  std::size_t rows() const { return vocab == 0 ? 0 : logits.size() / vocab; }
  std::span<const float> row(std::size_t i) const { return {logits.data() + i * vocab, vocab}; }
};

/// Forward interface shared by the trained transformer and scripted oracles.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const = 0;

  /// One forward over `new_tokens` placed right after the cached positions.
  /// New positions always see every cached position; among themselves they
  /// follow `mask` (size == new_tokens.size()). The first
  /// `materialize_prefix_len` new positions are appended to the cache;
  /// the rest only produce logits.
  virtual ForwardOutput forward(const CacheState& cache, std::span<const Token> new_tokens,
                                const MaskSpec& mask, std::size_t materialize_prefix_len) const = 0;

  /// Encodes the prompt into the initial cache (causal, fully materialized).
  CacheState encode_prompt(std::span<const Token> prompt) const;
};

/// Softmax probabilities of one logits row, computed in double.
std::vector<double> softmax(std::span<const float> logits);
/// Softmax probability of `token`; throws NumericError on non-finite logits.
double token_confidence(std::span<const float> logits, Token token);

/// Activations kept by a training forward for the backward pass.
struct TrainingActivations {
  struct Layer {
    std::vector<float> x_in, inv_rms1, a, q, k, v, probs, o, x_mid, inv_rms2, b, u, z;
  };
  std::size_t seq_len = 0;
  TokenSeq tokens;
  std::vector<std::size_t> positions;
  std::vector<std::uint8_t> visible;
  std::vector<Layer> layers;
  std::vector<float> x_final, inv_rms_final, f;
  std::vector<float> logits;  // seq_len x vocab
};

/// Decoder-only transformer: learned token and absolute position
/// embeddings, pre-norm RMSNorm blocks with masked multi-head attention and
/// a GELU MLP, untied output head. All parameters live in one flat buffer.
class TinyTransformer : public LanguageModel {
 public:
  /// Parameters drawn deterministically from config.seed.
  explicit TinyTransformer(const ModelConfig& config);
  TinyTransformer(const ModelConfig& config, std::vector<float> params);

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const override { return config_.vocab_size; }

  std::span<const float> params() const { return params_; }
  std::span<float> mutable_params() { return params_; }
  std::size_t param_count() const { return params_.size(); }
  /// FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;

  ForwardOutput forward(const CacheState& cache, std::span<const Token> new_tokens,
                        const MaskSpec& mask, std::size_t materialize_prefix_len) const override;

  /// Full-sequence forward with an explicit mask matrix and position ids,
  /// keeping activations for backward().
  TrainingActivations forward_train(std::span<const Token> tokens,
                                    std::span<const std::size_t> positions,
                                    const MaskMatrix& mask) const;
  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
  void backward(const TrainingActivations& acts, std::span<const float> dlogits,
                std::span<float> grad) const;

  void save(const std::filesystem::path& path) const;
  static TinyTransformer load(const std::filesystem::path& path);

 private:
  struct LayerOffsets {
    std::size_t norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;
  };
  struct Offsets {
    std::size_t tok_emb, pos_emb, norm_final, w_out, total;
    std::vector<LayerOffsets> layers;
  };
  static Offsets compute_offsets(const ModelConfig& config);

  std::span<const float> view(std::size_t offset, std::size_t count) const {
    return {params_.data() + offset, count};
  }

  ModelConfig config_;
  Offsets offsets_;
  std::vector<float> params_;
};

TinyTransformer init_model(const ModelConfig& config);

}  // namespace pabdm
