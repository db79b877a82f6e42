// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace kvc::oracle {

Matrix triple_loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

std::vector<double> exp_sum_softmax(std::span<const double> v, double scale) {
  std::vector<double> out;
  double total = 0.0;
  for (double x : v) {
    out.push_back(std::exp(scale * x));
    total += out.back();
  }
  for (double& x : out) x /= total;
  return out;
}

std::vector<std::size_t> pair_sort_desc(std::span<const double> v) {
  std::vector<std::pair<double, std::size_t>> pairs;
  for (std::size_t i = 0; i < v.size(); ++i) pairs.emplace_back(v[i], i);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (const auto& p : pairs) out.push_back(p.second);
  return out;
}

std::size_t grid_budget(double r, std::size_t count) {
  const auto percent = static_cast<std::size_t>(std::llround(r * 100.0));
  return (100 - percent) * count / 100;
}

std::vector<std::size_t> global_sort_allocation(const LayerImportance& importance, double r) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pool;
  for (std::size_t l = 0; l < importance.layers; ++l) {
    for (std::size_t k = 0; k < importance.tokens; ++k) pool.emplace_back(importance.at(l, k), l, k);
  }
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  const std::size_t budget = grid_budget(r, importance.layers * importance.tokens);
  std::vector<std::size_t> counts(importance.layers, 0);
  for (std::size_t i = 0; i < budget; ++i) ++counts[std::get<1>(pool[i])];
  return counts;
}

std::vector<std::uint8_t> global_sort_unstructured(const ScoreTensor& s, double r) {
  std::vector<std::pair<double, std::size_t>> pool;
  for (std::size_t i = 0; i < s.values.size(); ++i) pool.emplace_back(s.values[i], i);
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const std::size_t budget = grid_budget(r, s.values.size());
  std::vector<std::uint8_t> keep(s.values.size(), 0);
  for (std::size_t i = 0; i < budget; ++i) keep[pool[i].second] = 1;
  return keep;
}

std::set<std::size_t> streaming_set(std::size_t n, std::size_t budget, std::size_t sinks) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < sinks; ++i) out.insert(i);
  for (std::size_t i = n - (budget - sinks); i < n; ++i) out.insert(i);
  return out;
}

std::vector<std::vector<std::size_t>> tova_replay(const Model& model, const PrefillResult& full,
                                                  std::span<const std::size_t> budgets) {
  const auto& cfg = model.config;
  const std::size_t n = full.attention.tokens;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::vector<std::size_t> alive;
    for (std::size_t t = 0; t < n; ++t) {
      alive.push_back(t);
      if (alive.size() <= budgets[l]) continue;
      std::vector<double> mean(alive.size(), 0.0);
      for (std::size_t h = 0; h < cfg.q_heads; ++h) {
        const std::size_t kv = h / cfg.group_size();
        const auto q = full.attention.query(l, h).row(t);
        const Matrix& keys = full.cache.layers[l].keys[kv];
        std::vector<double> logits;
        for (std::size_t a : alive) {
          double s = 0.0;
          for (std::size_t d = 0; d < cfg.head_dim; ++d) s += q[d] * keys(a, d);
          logits.push_back(s);
        }
        const auto w = exp_sum_softmax(logits, model.attention_scale());
        for (std::size_t i = 0; i < alive.size(); ++i) mean[i] += w[i] / cfg.q_heads;
      }
      std::size_t victim = 0;
      for (std::size_t i = 1; i < alive.size(); ++i) {
        if (mean[i] <= mean[victim]) victim = i;
      }
      alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(victim));
    }
    out.push_back(alive);
  }
  return out;
}

std::vector<std::vector<std::vector<std::size_t>>> snapkv_topk(const AttentionCapture& cap,
                                                               std::size_t budget,
                                                               std::size_t window) {
  const std::size_t n = cap.context;
  const std::size_t group = cap.q_heads / cap.kv_heads;
  std::vector<std::vector<std::vector<std::size_t>>> out(cap.layers);
  for (std::size_t l = 0; l < cap.layers; ++l) {
    for (std::size_t kv = 0; kv < cap.kv_heads; ++kv) {
      std::vector<double> score(n, 0.0);
      for (std::size_t g = 0; g < group; ++g) {
        const std::size_t h = kv * group + g;
        for (std::size_t c = 0; c < n; ++c) {
          double best = 0.0;
          for (std::size_t m = cap.task_tokens - window; m < cap.task_tokens; ++m) {
            best = std::max(best, cap.at(l, h, c, m));
          }
          score[c] += best / static_cast<double>(group);
        }
      }
      std::vector<std::pair<double, std::size_t>> rest;
      for (std::size_t c = 0; c + window < n; ++c) rest.emplace_back(score[c], c);
      std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      std::vector<std::size_t> kept;
      for (std::size_t i = 0; i < budget - window; ++i) kept.push_back(rest[i].second);
      for (std::size_t c = n - window; c < n; ++c) kept.push_back(c);
      std::sort(kept.begin(), kept.end());
      out[l].push_back(kept);
    }
  }
  return out;
}

double trapezoid_auc(std::span<const double> r, std::span<const double> reward) {
  double area = 0.0;
  for (std::size_t i = 1; i < r.size(); ++i) {
    area += (r[i] - r[i - 1]) * (reward[i] + reward[i - 1]) / 2.0;
  }
  return area / (r.back() - r.front());
}

std::vector<double> last_logits(const Model& model, std::span<const Token> tokens) {
  const auto result = prefill(model, tokens);
  const auto row = result.logits.row(result.logits.rows() - 1);
  return {row.begin(), row.end()};
}

std::vector<Token> recompute_greedy(const Model& model, std::vector<Token> prompt,
                                    std::size_t steps) {
  std::vector<Token> out;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto logits = last_logits(model, prompt);
    Token best = 0;
    for (std::size_t v = 1; v < logits.size(); ++v) {
      if (logits[v] > logits[best]) best = static_cast<Token>(v);
    }
    out.push_back(best);
    prompt.push_back(best);
  }
  return out;
}

Token dictionary_lookup(std::span<const Token> context, Token query) {
  for (std::size_t i = 0; i + 1 < context.size(); i += 2) {
    if (context[i] == query) return context[i + 1];
  }
  return static_cast<Token>(-1);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

ModelConfig random_config(SeededRng& rng) {
  ModelConfig c;
  c.layers = 1 + rng.below(4);
  c.kv_heads = 1 + rng.below(2);
  c.q_heads = c.kv_heads * (1 + rng.below(2));
  c.head_dim = 2 * (2 + rng.below(3));
  c.d_model = c.q_heads * c.head_dim;
  c.vocab = 16 + rng.below(32);
  c.mlp_hidden = rng.below(2) == 0 ? 0 : 16;
  c.seed = rng.next_u64();
  return c;
}

std::vector<Token> random_tokens(SeededRng& rng, std::size_t n, std::size_t vocab) {
  std::vector<Token> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<Token>(rng.below(vocab)));
  return out;
}

ScoreTensor random_scores(SeededRng& rng, std::size_t layers, std::size_t heads,
                          std::size_t tokens, ScoreStage stage) {
  ScoreTensor s;
  s.stage = stage;
  s.layers = layers;
  s.heads = heads;
  s.tokens = tokens;
  for (std::size_t i = 0; i < layers * heads * tokens; ++i) {
    // Coarse values so ties occur.
    s.values.push_back(static_cast<double>(rng.below(16)) / 16.0);
  }
  return s;
}

LayerImportance random_importance(SeededRng& rng, std::size_t layers, std::size_t tokens) {
  LayerImportance imp;
  imp.layers = layers;
  imp.tokens = tokens;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> row;
    for (std::size_t k = 0; k < tokens; ++k) row.push_back(static_cast<double>(rng.below(12)) / 8.0);
    std::sort(row.begin(), row.end(), std::greater<>());
    imp.values.insert(imp.values.end(), row.begin(), row.end());
  }
  return imp;
}

}  // namespace kvc::oracle
