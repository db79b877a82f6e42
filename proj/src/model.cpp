// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kvcompose/errors.hpp"

namespace kvc {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal() * scale;
  return m;
}

void rms_normalize(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(v.size()) + kNormEps);
  for (double& x : v) x *= inv;
}

std::vector<double> normed(const Model& model, std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (model.config.rms_norm) rms_normalize(out);
  return out;
}

Matrix normed_rows(const Model& model, const Matrix& x) {
  Matrix out = x;
  if (model.config.rms_norm) {
    for (std::size_t r = 0; r < out.rows(); ++r) rms_normalize(out.row(r));
  }
  return out;
}

void apply_mlp(const LayerWeights& w, const Model& model, std::span<double> x) {
  if (model.config.mlp_hidden == 0) return;
  const auto in = normed(model, x);
  auto hidden = vecmat(in, w.mlp_in);
  for (double& h : hidden) h = std::max(h, 0.0);
  const auto out = vecmat(hidden, w.mlp_out);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += out[i];
}

std::vector<double> final_logits(const Model& model, std::span<const double> x) {
  return vecmat(normed(model, x), model.unembedding);
}

}  // namespace

void ModelConfig::validate() const {
  if (layers == 0 || q_heads == 0 || kv_heads == 0 || d_model == 0 || head_dim == 0 ||
      vocab == 0) {
    throw ConfigError("model config: all counts must be at least 1");
  }
  if (q_heads % kv_heads != 0) {
    throw ConfigError("model config: q_heads (" + std::to_string(q_heads) +
                      ") must be a multiple of kv_heads (" + std::to_string(kv_heads) + ")");
  }
  if (d_model != q_heads * head_dim) {
    throw ConfigError("model config: d_model must equal q_heads * head_dim");
  }
  if (rotated_dims() % 2 != 0 || rotated_dims() > head_dim) {
    throw ConfigError("model config: rotary dims must be even and at most head_dim");
  }
  if (max_context == 0 || max_context > kMaxContext) {
    throw ConfigError("model config: max_context must be in [1, 512]");
  }
  if (!(rope_base > 1.0)) throw ConfigError("model config: rope_base must exceed 1");
}

double Model::attention_scale() const {
  return 1.0 / std::sqrt(static_cast<double>(config.head_dim));
}

bool KVCache::is_structured() const {
  for (const auto& layer : layers) {
    if (layer.keys.size() != layer.values.size()) return false;
    for (std::size_t h = 0; h < layer.keys.size(); ++h) {
      if (layer.keys[h].rows() != layer.rows() || layer.values[h].rows() != layer.rows()) {
        return false;
      }
    }
  }
  return true;
}

std::vector<std::size_t> KVCache::rows_per_layer() const {
  std::vector<std::size_t> out;
  out.reserve(layers.size());
  for (const auto& layer : layers) out.push_back(layer.rows());
  return out;
}

KeyMask KeyMask::all(std::size_t layers, std::size_t kv_heads, std::size_t tokens) {
  KeyMask m;
  m.layers = layers;
  m.kv_heads = kv_heads;
  m.tokens = tokens;
  m.keep.assign(layers * kv_heads * tokens, 1);
  return m;
}

std::size_t KeyMask::count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

Model init_model(const ModelConfig& config) {
  config.validate();
  SeededRng rng(config.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  Model model;
  model.config = config;
  // Draw order is part of the reproducibility contract.
  model.embedding = random_matrix(rng, config.vocab, config.d_model, 1.0);
  model.layers.resize(config.layers);
  for (auto& layer : model.layers) {
    for (std::size_t h = 0; h < config.q_heads; ++h) {
      layer.wq.push_back(random_matrix(rng, config.d_model, config.head_dim, scale));
    }
    for (std::size_t h = 0; h < config.kv_heads; ++h) {
      layer.wk.push_back(random_matrix(rng, config.d_model, config.head_dim, scale));
    }
    for (std::size_t h = 0; h < config.kv_heads; ++h) {
      layer.wv.push_back(random_matrix(rng, config.d_model, config.head_dim, scale));
    }
    for (std::size_t h = 0; h < config.q_heads; ++h) {
      layer.wo.push_back(random_matrix(rng, config.head_dim, config.d_model, scale));
    }
    if (config.mlp_hidden > 0) {
      layer.mlp_in = random_matrix(rng, config.d_model, config.mlp_hidden, scale);
      layer.mlp_out = random_matrix(rng, config.mlp_hidden, config.d_model, scale);
    }
  }
  model.unembedding = random_matrix(rng, config.d_model, config.vocab, scale);
  return model;
}

void apply_rotary(std::span<double> v, std::size_t position, const ModelConfig& config) {
  const std::size_t rot = config.rotated_dims();
  const double pos = static_cast<double>(position);
  for (std::size_t i = 0; i < rot / 2; ++i) {
    const double theta =
        std::pow(config.rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(rot));
    const double c = std::cos(pos * theta);
    const double s = std::sin(pos * theta);
    const double x0 = v[2 * i];
    const double x1 = v[2 * i + 1];
    v[2 * i] = x0 * c - x1 * s;
    v[2 * i + 1] = x0 * s + x1 * c;
  }
}

PrefillResult prefill(const Model& model, std::span<const Token> tokens) {
  const auto& cfg = model.config;
  const std::size_t n = tokens.size();
  if (n == 0) throw UsageError("prefill: empty token list");
  if (n > cfg.max_context) {
    throw UsageError("prefill: " + std::to_string(n) + " tokens exceed max context " +
                     std::to_string(cfg.max_context));
  }
  Matrix x(n, cfg.d_model);
  for (std::size_t t = 0; t < n; ++t) {
    if (tokens[t] >= cfg.vocab) throw UsageError("prefill: token id out of vocabulary");
    const auto src = model.embedding.row(tokens[t]);
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }

  PrefillResult result;
  result.cache.layers.resize(cfg.layers);
  result.cache.next_position = n;
  result.attention.layers = cfg.layers;
  result.attention.heads = cfg.q_heads;
  result.attention.tokens = n;

  Matrix causal(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) causal(i, j) = kNegInf;
  }

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& w = model.layers[l];
    const Matrix a = normed_rows(model, x);
    auto& layer_cache = result.cache.layers[l];
    for (std::size_t h = 0; h < cfg.kv_heads; ++h) {
      Matrix k = matmul(a, w.wk[h]);
      for (std::size_t t = 0; t < n; ++t) apply_rotary(k.row(t), t, cfg);
      layer_cache.keys.push_back(std::move(k));
      layer_cache.values.push_back(matmul(a, w.wv[h]));
    }
    Matrix attn_out(n, cfg.d_model);
    for (std::size_t h = 0; h < cfg.q_heads; ++h) {
      const std::size_t g = h / cfg.group_size();
      Matrix q = matmul(a, w.wq[h]);
      for (std::size_t t = 0; t < n; ++t) apply_rotary(q.row(t), t, cfg);
      Matrix scores = matmul_transposed(q, layer_cache.keys[g]);
      for (std::size_t i = 0; i < scores.data().size(); ++i) {
        scores.data()[i] += causal.data()[i];
      }
      Matrix weights = softmax_rows(scores, model.attention_scale());
      const Matrix head_out = matmul(matmul(weights, layer_cache.values[g]), w.wo[h]);
      for (std::size_t i = 0; i < attn_out.data().size(); ++i) {
        attn_out.data()[i] += head_out.data()[i];
      }
      result.attention.weights.push_back(std::move(weights));
      result.attention.queries.push_back(std::move(q));
    }
    for (std::size_t i = 0; i < x.data().size(); ++i) x.data()[i] += attn_out.data()[i];
    for (std::size_t t = 0; t < n; ++t) apply_mlp(w, model, x.row(t));
  }

  result.logits = Matrix(n, cfg.vocab);
  for (std::size_t t = 0; t < n; ++t) {
    const auto logits = final_logits(model, x.row(t));
    std::copy(logits.begin(), logits.end(), result.logits.row(t).begin());
  }
  return result;
}

std::vector<double> decode_step(const Model& model, KVCache& cache, Token token,
                                std::size_t position, const KeyMask* mask) {
  const auto& cfg = model.config;
  if (token >= cfg.vocab) throw UsageError("decode_step: token id out of vocabulary");
  if (cache.layers.size() != cfg.layers) {
    throw ShapeError("decode_step: cache has " + std::to_string(cache.layers.size()) +
                     " layers, model has " + std::to_string(cfg.layers));
  }
  if (mask != nullptr && (mask->layers != cfg.layers || mask->kv_heads != cfg.kv_heads)) {
    throw ShapeError("decode_step: mask shape does not match model");
  }
  std::vector<double> x(model.embedding.row(token).begin(), model.embedding.row(token).end());

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& w = model.layers[l];
    auto& layer_cache = cache.layers[l];
    if (layer_cache.keys.empty()) {
      layer_cache.keys.assign(cfg.kv_heads, Matrix(0, cfg.head_dim));
      layer_cache.values.assign(cfg.kv_heads, Matrix(0, cfg.head_dim));
    }
    const auto a = normed(model, x);
    for (std::size_t h = 0; h < cfg.kv_heads; ++h) {
      auto k = vecmat(a, w.wk[h]);
      apply_rotary(k, position, cfg);
      layer_cache.keys[h].append_row(k);
      layer_cache.values[h].append_row(vecmat(a, w.wv[h]));
    }
    std::vector<double> attn_out(cfg.d_model, 0.0);
    for (std::size_t h = 0; h < cfg.q_heads; ++h) {
      const std::size_t g = h / cfg.group_size();
      auto q = vecmat(a, w.wq[h]);
      apply_rotary(q, position, cfg);
      const Matrix& keys = layer_cache.keys[g];
      const Matrix& values = layer_cache.values[g];
      std::vector<double> weights(keys.rows());
      for (std::size_t r = 0; r < keys.rows(); ++r) {
        const bool hidden = mask != nullptr && r < mask->tokens && !mask->kept(l, g, r);
        weights[r] = hidden ? kNegInf : dot(q, keys.row(r));
      }
      softmax_inplace(weights, model.attention_scale());
      std::vector<double> mixed(cfg.head_dim, 0.0);
      for (std::size_t r = 0; r < values.rows(); ++r) {
        if (weights[r] == 0.0) continue;
        const auto v = values.row(r);
        for (std::size_t j = 0; j < cfg.head_dim; ++j) mixed[j] += weights[r] * v[j];
      }
      const auto out = vecmat(mixed, w.wo[h]);
      for (std::size_t i = 0; i < cfg.d_model; ++i) attn_out[i] += out[i];
    }
    for (std::size_t i = 0; i < cfg.d_model; ++i) x[i] += attn_out[i];
    apply_mlp(w, model, x);
  }
  cache.next_position = std::max(cache.next_position, position + 1);
  return final_logits(model, x);
}

std::vector<Token> greedy_decode(const Model& model, KVCache& cache, Token start,
                                 std::size_t steps, const KeyMask* mask) {
  if (steps == 0) throw UsageError("greedy_decode: steps must be at least 1");
  std::vector<Token> out;
  out.reserve(steps);
  Token current = start;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto logits = decode_step(model, cache, current, cache.next_position, mask);
    current = static_cast<Token>(argmax(logits));
    out.push_back(current);
  }
  return out;
}

}  // namespace kvc
