// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvcompose/numerics.hpp"

namespace kvc {

using Token = std::uint32_t;

inline constexpr std::size_t kMaxContext = 512;

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t q_heads = 4;
  std::size_t kv_heads = 2;
  std::size_t d_model = 32;
  std::size_t head_dim = 8;
  std::size_t vocab = 64;
  std::uint64_t seed = 0;

  std::size_t max_context = kMaxContext;
  // Leading head dims that are rotated; 0 means all of head_dim.
  std::size_t rotary_dims = 0;
  double rope_base = 10000.0;
  bool rms_norm = true;
  // Hidden width of the per-layer ReLU MLP; 0 disables it.
  std::size_t mlp_hidden = 64;

  std::size_t group_size() const { return q_heads / kv_heads; }
  std::size_t rotated_dims() const { return rotary_dims == 0 ? head_dim : rotary_dims; }

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  std::vector<Matrix> wq;  // q_heads × [d_model × head_dim]
  std::vector<Matrix> wk;  // kv_heads × [d_model × head_dim]
  std::vector<Matrix> wv;  // kv_heads × [d_model × head_dim]
  std::vector<Matrix> wo;  // q_heads × [head_dim × d_model]
  Matrix mlp_in;           // d_model × mlp_hidden
  Matrix mlp_out;          // mlp_hidden × d_model
};

struct Model {
  ModelConfig config;
  Matrix embedding;  // vocab × d_model
  std::vector<LayerWeights> layers;
  Matrix unembedding;  // d_model × vocab
  /// Pre-softmax multiplier; 1/sqrt(head_dim) for every model built here.
  double attention_scale() const;
};

/// Key/value rows of one layer, one matrix per kv head. All heads hold the same row count.
struct LayerCache {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;

  std::size_t rows() const { return keys.empty() ? 0 : keys.front().rows(); }
};

/// Per-layer caches; keys are stored after rotary rotation at their original position.
struct KVCache {
  std::vector<LayerCache> layers;
  std::size_t next_position = 0;

  /// Every layer has a uniform row count across its heads.
  bool is_structured() const;
  std::vector<std::size_t> rows_per_layer() const;
};

/// Per-(layer, kv head) keep flags over the leading cache rows. Rows past
/// `tokens` (e.g. freshly decoded ones) are always visible.
struct KeyMask {
  std::size_t layers = 0;
  std::size_t kv_heads = 0;
  std::size_t tokens = 0;
  std::vector<std::uint8_t> keep;

  static KeyMask all(std::size_t layers, std::size_t kv_heads, std::size_t tokens);
  bool kept(std::size_t layer, std::size_t head, std::size_t token) const {
    return keep[(layer * kv_heads + head) * tokens + token] != 0;
  }
  std::size_t count() const;
};

/// Full causal attention weights and rotated queries from a prefill.
struct AttentionRecord {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::vector<Matrix> weights;  // (layer, q head) → tokens × tokens, row = query
  std::vector<Matrix> queries;  // (layer, q head) → tokens × head_dim, post-rotation

  const Matrix& at(std::size_t layer, std::size_t head) const {
    return weights[layer * heads + head];
  }
  const Matrix& query(std::size_t layer, std::size_t head) const {
    return queries[layer * heads + head];
  }
};

struct PrefillResult {
  KVCache cache;
  Matrix logits;  // tokens × vocab
  AttentionRecord attention;
};

Model init_model(const ModelConfig& config);

/// Rotates the leading rotary dims of `v` (interleaved pairs) to `position`.
void apply_rotary(std::span<double> v, std::size_t position, const ModelConfig& config);

/// Causal forward pass over `tokens` in matrix form.
PrefillResult prefill(const Model& model, std::span<const Token> tokens);

/// One incremental step: appends the token's K,V to every layer and returns logits.
/// `mask`, when given, hides masked context rows pre-softmax.
std::vector<double> decode_step(const Model& model, KVCache& cache, Token token,
                                 std::size_t position, const KeyMask* mask = nullptr);

/// Greedy argmax decoding for `steps` tokens starting from `start` at cache.next_position.
std::vector<Token> greedy_decode(const Model& model, KVCache& cache, Token start,
                                 std::size_t steps, const KeyMask* mask = nullptr);

/// Two-layer attention-only model with exact in-context key→value recall.
///
/// Tokens [0, vocab/2) are keys and [vocab/2, vocab) are values. For a prompt
/// a₁ b₁ … a_k b_k followed by query a_j the argmax next token is b_j.
Model construct_induction_model(std::size_t num_pairs, std::size_t vocab);

}  // namespace kvc
