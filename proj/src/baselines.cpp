// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kvcompose/errors.hpp"

namespace kvc {

std::vector<std::size_t> uniform_budgets(std::size_t layers, std::size_t tokens, double r) {
  const std::size_t total = retention_budget(r, layers, tokens);
  std::vector<std::size_t> budgets(layers, total / layers);
  for (std::size_t l = 0; l < total % layers; ++l) ++budgets[l];
  return budgets;
}

std::vector<std::size_t> streaming_select(std::size_t n, std::size_t budget, std::size_t sinks) {
  if (budget < sinks) {
    throw ConfigError("streaming: budget " + std::to_string(budget) + " is below " +
                      std::to_string(sinks) + " sinks");
  }
  if (budget > n) {
    throw ConfigError("streaming: budget " + std::to_string(budget) + " exceeds context " +
                      std::to_string(n));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sinks; ++i) out.push_back(i);
  for (std::size_t i = n - (budget - sinks); i < n; ++i) {
    out.push_back(i);
  }
  return out;
}

TokenSelection tova_select(const Model& model, const PrefillResult& full,
                           std::span<const std::size_t> budgets) {
  const auto& cfg = model.config;
  const std::size_t n = full.attention.tokens;
  if (budgets.size() != cfg.layers) throw ShapeError("tova_select: one budget per layer required");
  const double scale = model.attention_scale();

  std::vector<std::vector<std::size_t>> survivors(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto& alive = survivors[l];
    const auto& keys = full.cache.layers[l].keys;
    std::vector<double> avg;
    std::vector<double> logits;
    for (std::size_t t = 0; t < n; ++t) {
      alive.push_back(t);
      if (alive.size() <= budgets[l]) continue;
      avg.assign(alive.size(), 0.0);
      for (std::size_t h = 0; h < cfg.q_heads; ++h) {
        const auto q = full.attention.query(l, h).row(t);
        const Matrix& k = keys[h / cfg.group_size()];
        logits.resize(alive.size());
        for (std::size_t i = 0; i < alive.size(); ++i) logits[i] = dot(q, k.row(alive[i]));
        softmax_inplace(logits, scale);
        for (std::size_t i = 0; i < alive.size(); ++i) avg[i] += logits[i];
      }
      // Lowest average attention goes; among ties the later token goes.
      std::size_t victim = 0;
      for (std::size_t i = 1; i < alive.size(); ++i) {
        if (avg[i] <= avg[victim]) victim = i;
      }
      alive.erase(alive.begin() + static_cast<long>(victim));
    }
  }
  return TokenSelection::shared(survivors, cfg.kv_heads);
}

TokenSelection tova_select(const Model& model, std::span<const Token> context,
                           std::size_t budget) {
  if (budget == 0) throw ConfigError("tova: budget must be at least 1");
  const auto full = prefill(model, context);
  const std::vector<std::size_t> budgets(model.config.layers, budget);
  return tova_select(model, full, budgets);
}

TokenSelection snapkv_select(const AttentionCapture& cap, std::span<const std::size_t> budgets,
                             std::span<const std::size_t> windows) {
  const std::size_t n = cap.context;
  if (budgets.size() != cap.layers || windows.size() != cap.layers) {
    throw ShapeError("snapkv_select: one budget and window per layer required");
  }
  const std::size_t group = cap.q_heads / cap.kv_heads;

  TokenSelection sel;
  sel.slots.resize(cap.layers);
  for (std::size_t l = 0; l < cap.layers; ++l) {
    const std::size_t budget = budgets[l];
    const std::size_t window = windows[l];
    if (window > n) throw ConfigError("snapkv: window exceeds context length");
    if (window > cap.task_tokens) {
      throw UsageError("snapkv: capture holds " + std::to_string(cap.task_tokens) +
                       " query rows, window needs " + std::to_string(window));
    }
    if (budget > n) throw ConfigError("snapkv: budget exceeds context length");
    if (budget < window) {
      throw ConfigError("snapkv: budget " + std::to_string(budget) + " is below window " +
                        std::to_string(window));
    }
    const std::size_t first_row = cap.task_tokens - window;
    const std::size_t prefix = n - window;
    for (std::size_t g = 0; g < cap.kv_heads; ++g) {
      std::vector<double> score(prefix, 0.0);
      for (std::size_t c = 0; c < prefix; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < group; ++i) {
          double peak = 0.0;
          for (std::size_t m = first_row; m < cap.task_tokens; ++m) {
            peak = std::max(peak, cap.at(l, g * group + i, c, m));
          }
          acc += peak;
        }
        score[c] = acc / static_cast<double>(group);
      }
      auto order = argsort_desc(score);
      order.resize(budget - window);
      for (std::size_t c = prefix; c < n; ++c) order.push_back(c);
      std::sort(order.begin(), order.end());
      sel.slots[l].push_back(std::move(order));
    }
  }
  return sel;
}

TokenSelection snapkv_select(const AttentionCapture& cap, std::span<const std::size_t> budgets,
                             std::size_t window) {
  const std::vector<std::size_t> windows(cap.layers, window);
  return snapkv_select(cap, budgets, windows);
}

TokenSelection snapkv_select(const AttentionCapture& cap, std::size_t budget_per_head,
                             std::size_t window) {
  const std::vector<std::size_t> budgets(cap.layers, budget_per_head);
  return snapkv_select(cap, budgets, window);
}

std::vector<std::size_t> pyramid_budgets(std::size_t layers, std::size_t tokens, double r,
                                         double shape) {
  if (!(shape >= 0.0)) throw ConfigError("pyramid: shape must be non-negative");
  if (layers == 0) throw ConfigError("pyramid: layers must be positive");
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("pyramid: ratio must lie in [0, 1]");
  const std::size_t total = retention_budget(r, layers, tokens);

  std::vector<double> weights(layers, 1.0);
  if (layers > 1) {
    for (std::size_t l = 0; l < layers; ++l) {
      const double depth = static_cast<double>(l) / static_cast<double>(layers - 1);
      weights[l] = std::max(0.0, 1.0 + shape * (1.0 - 2.0 * depth));
    }
  }
  const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);

  // Largest-remainder rounding; ties go to the earlier layer.
  std::vector<std::size_t> budgets(layers);
  std::vector<double> remainders(layers);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const double target = static_cast<double>(total) * weights[l] / weight_sum;
    budgets[l] = static_cast<std::size_t>(std::floor(target));
    remainders[l] = target - std::floor(target);
    assigned += budgets[l];
  }
  const auto by_remainder = argsort_desc(remainders);
  for (std::size_t i = 0; assigned < total && i < layers; ++i, ++assigned) {
    ++budgets[by_remainder[i]];
  }

  const std::size_t floor_tokens = total >= layers ? 1 : 0;
  for (auto& b : budgets) b = std::clamp(b, floor_tokens, tokens);
  std::size_t sum = std::accumulate(budgets.begin(), budgets.end(), std::size_t{0});
  while (sum < total) {
    const auto it = std::find_if(budgets.begin(), budgets.end(),
                                 [&](std::size_t b) { return b < tokens; });
    if (it == budgets.end()) throw ConfigError("pyramid: budget cannot be placed");
    ++*it;
    ++sum;
  }
  while (sum > total) {
    const auto it = std::find_if(budgets.rbegin(), budgets.rend(),
                                 [&](std::size_t b) { return b > floor_tokens; });
    if (it == budgets.rend()) throw ConfigError("pyramid: budget floor is infeasible");
    --*it;
    --sum;
  }
  return budgets;
}

TokenSelection random_select(std::size_t layers, std::size_t kv_heads, std::size_t tokens,
                             std::span<const std::size_t> budgets, std::uint64_t seed) {
  if (budgets.size() != layers) throw ShapeError("random_select: one budget per layer required");
  SeededRng rng(seed);
  std::vector<std::vector<std::size_t>> per_layer(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    if (budgets[l] > tokens) throw ConfigError("random_select: budget exceeds context length");
    std::vector<std::size_t> all(tokens);
    std::iota(all.begin(), all.end(), std::size_t{0});
    rng.shuffle(all);
    all.resize(budgets[l]);
    std::sort(all.begin(), all.end());
    per_layer[l] = std::move(all);
  }
  return TokenSelection::shared(per_layer, kv_heads);
}

}  // namespace kvc
