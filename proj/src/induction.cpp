// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

// Hand-built two-layer recall model.
//
// Residual stream layout (V = vocab):
//   [0, V)    current token, one-hot
//   [V, 2V)   previous token, written by layer 0
//   [2V, 3V)  recalled token, written by layer 1; read by the unembedding
//   3V        constant 1
//
// Layer 0, kv head 0 / q head 0: previous-token head. Query and key read the
// constant channel into the rotary dims so the rotated dot product peaks at
// relative offset -1. The value copies the current token into the previous
// token channel.
//
// Layer 1, kv head 0 / q head 0: match-and-copy head. The key encodes the
// previous token (key ids only) plus a "this is a value token" bit; the query
// encodes the current key token plus a constant on the value bit. The target
// b_j scores match + type, every other position at most one of the two.
//
// All remaining heads have zero weights.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kvcompose/errors.hpp"
#include "kvcompose/model.hpp"

namespace kvc {

namespace {

constexpr std::size_t kRotaryDims = 16;
constexpr std::size_t kQueryHeads = 4;
constexpr std::size_t kKvHeads = 2;
// Pre-softmax logit margin between the intended key and every competitor.
constexpr double kMargin = 40.0;

std::vector<double> rotary_thetas(const ModelConfig& cfg) {
  std::vector<double> thetas;
  const std::size_t rot = cfg.rotated_dims();
  for (std::size_t i = 0; i < rot / 2; ++i) {
    thetas.push_back(
        std::pow(cfg.rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(rot)));
  }
  return thetas;
}

// Smallest drop of sum_i cos(delta * theta_i) below its peak over every
// reachable non-zero offset delta = s - t + 1, s <= t < max_context.
double previous_token_gap(const ModelConfig& cfg, const std::vector<double>& thetas) {
  double gap = std::numeric_limits<double>::infinity();
  const auto span = static_cast<long>(cfg.max_context);
  for (long delta = 1; delta >= -span; --delta) {
    if (delta == 0) continue;
    double drop = 0.0;
    for (double theta : thetas) drop += 1.0 - std::cos(static_cast<double>(delta) * theta);
    gap = std::min(gap, drop);
  }
  return gap;
}

Model zero_model(const ModelConfig& cfg) {
  Model model;
  model.config = cfg;
  model.embedding = Matrix(cfg.vocab, cfg.d_model);
  model.layers.resize(cfg.layers);
  for (auto& layer : model.layers) {
    layer.wq.assign(cfg.q_heads, Matrix(cfg.d_model, cfg.head_dim));
    layer.wk.assign(cfg.kv_heads, Matrix(cfg.d_model, cfg.head_dim));
    layer.wv.assign(cfg.kv_heads, Matrix(cfg.d_model, cfg.head_dim));
    layer.wo.assign(cfg.q_heads, Matrix(cfg.head_dim, cfg.d_model));
  }
  model.unembedding = Matrix(cfg.d_model, cfg.vocab);
  return model;
}

}  // namespace

Model construct_induction_model(std::size_t num_pairs, std::size_t vocab) {
  if (num_pairs == 0) throw ConfigError("induction model: num_pairs must be at least 1");
  if (vocab < 4 || vocab % 2 != 0) {
    throw ConfigError("induction model: vocab must be even and at least 4");
  }
  const std::size_t half = vocab / 2;
  if (half < num_pairs) {
    throw ConfigError("induction model: vocab/2 = " + std::to_string(half) +
                      " key tokens cannot hold " + std::to_string(num_pairs) +
                      " distinct keys");
  }
  if (2 * num_pairs + 1 > kMaxContext) {
    throw ConfigError("induction model: prompt of " + std::to_string(num_pairs) +
                      " pairs exceeds max context");
  }

  std::size_t head_dim = std::max(vocab, half + 1 + kRotaryDims);
  head_dim += head_dim % 2;

  ModelConfig cfg;
  cfg.layers = 2;
  cfg.q_heads = kQueryHeads;
  cfg.kv_heads = kKvHeads;
  cfg.head_dim = head_dim;
  cfg.d_model = kQueryHeads * head_dim;
  cfg.vocab = vocab;
  cfg.seed = 0;
  cfg.rotary_dims = kRotaryDims;
  cfg.rms_norm = false;
  cfg.mlp_hidden = 0;
  cfg.validate();

  const std::size_t tok = 0;
  const std::size_t prev = vocab;
  const std::size_t recalled = 2 * vocab;
  const std::size_t constant = 3 * vocab;

  Model model = zero_model(cfg);
  const double sqrt_dh = std::sqrt(static_cast<double>(head_dim));

  for (std::size_t t = 0; t < vocab; ++t) {
    model.embedding(t, tok + t) = 1.0;
    model.embedding(t, constant) = 1.0;
  }

  // Layer 0: previous-token head.
  {
    auto& layer = model.layers[0];
    const auto thetas = rotary_thetas(cfg);
    const double gap = previous_token_gap(cfg, thetas);
    const double c = std::sqrt(kMargin * sqrt_dh / gap);
    for (std::size_t i = 0; i < thetas.size(); ++i) {
      layer.wk[0](constant, 2 * i) = c;
      layer.wq[0](constant, 2 * i) = c * std::cos(thetas[i]);
      layer.wq[0](constant, 2 * i + 1) = -c * std::sin(thetas[i]);
    }
    for (std::size_t t = 0; t < vocab; ++t) {
      layer.wv[0](tok + t, t) = 1.0;
      layer.wo[0](t, prev + t) = 1.0;
    }
  }

  // Layer 1: match-and-copy head.
  {
    auto& layer = model.layers[1];
    const double weight = kMargin * sqrt_dh;
    const std::size_t type_dim = kRotaryDims + half;
    for (std::size_t j = 0; j < half; ++j) {
      layer.wk[0](prev + j, kRotaryDims + j) = 1.0;
      layer.wq[0](tok + j, kRotaryDims + j) = weight;
    }
    for (std::size_t j = half; j < vocab; ++j) layer.wk[0](tok + j, type_dim) = 1.0;
    layer.wq[0](constant, type_dim) = weight;
    for (std::size_t t = 0; t < vocab; ++t) {
      layer.wv[0](tok + t, t) = 1.0;
      layer.wo[0](t, recalled + t) = 1.0;
    }
  }

  for (std::size_t t = 0; t < vocab; ++t) model.unembedding(recalled + t, t) = 1.0;
  return model;
}

}  // namespace kvc
