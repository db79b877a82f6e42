// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/composer.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <tuple>

#include "kvcompose/errors.hpp"

namespace kvc {

std::size_t retention_budget(double r_target, std::size_t layers, std::size_t tokens) {
  if (!(r_target >= 0.0 && r_target <= 1.0)) {
    throw UsageError("compression ratio must lie in [0, 1], got " + std::to_string(r_target));
  }
  const double full = static_cast<double>(layers) * static_cast<double>(tokens);
  const double kept = (1.0 - r_target) * full;
  const auto budget = static_cast<std::size_t>(std::floor(kept + 1e-9 * std::max(1.0, kept)));
  return std::min(budget, layers * tokens);
}

bool TokenSelection::is_structured() const {
  for (const auto& layer : slots) {
    for (const auto& head : layer) {
      if (head.size() != layer.front().size()) return false;
    }
  }
  return true;
}

std::vector<std::size_t> TokenSelection::per_layer() const {
  std::vector<std::size_t> out;
  for (const auto& layer : slots) out.push_back(layer.empty() ? 0 : layer.front().size());
  return out;
}

std::size_t TokenSelection::total_rows() const {
  std::size_t total = 0;
  for (const auto& layer : slots) {
    for (const auto& head : layer) total += head.size();
  }
  return total;
}

TokenSelection TokenSelection::shared(const std::vector<std::vector<std::size_t>>& per_layer,
                                      std::size_t kv_heads) {
  TokenSelection sel;
  for (const auto& tokens : per_layer) sel.slots.emplace_back(kv_heads, tokens);
  return sel;
}

CompositeIndex composite_indices(const ScoreTensor& s) {
  if (s.stage != ScoreStage::kFinal) throw UsageError("composite_indices: expects final scores");
  CompositeIndex ci;
  ci.layers = s.layers;
  ci.heads = s.heads;
  ci.tokens = s.tokens;
  ci.order.reserve(s.values.size());
  ci.sorted_scores.reserve(s.values.size());
  for (std::size_t l = 0; l < s.layers; ++l) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      const auto row = s.row(l, h);
      for (std::size_t idx : argsort_desc(row)) {
        ci.order.push_back(idx);
        ci.sorted_scores.push_back(row[idx]);
      }
    }
  }
  return ci;
}

LayerImportance layer_importance(const CompositeIndex& ci, Agg op) {
  LayerImportance imp;
  imp.layers = ci.layers;
  imp.tokens = ci.tokens;
  imp.values.assign(ci.layers * ci.tokens, 0.0);
  for (std::size_t l = 0; l < ci.layers; ++l) {
    for (std::size_t k = 0; k < ci.tokens; ++k) {
      double acc = 0.0;
      for (std::size_t h = 0; h < ci.heads; ++h) {
        const double x = ci.score_row(l, h)[k];
        acc = op == Agg::kMax ? std::max(acc, x) : acc + x;
      }
      imp.values[l * ci.tokens + k] = op == Agg::kMax ? acc : acc / static_cast<double>(ci.heads);
    }
  }
  return imp;
}

BudgetAllocation allocate_budgets(const LayerImportance& importance, double r_target) {
  const std::size_t layers = importance.layers;
  const std::size_t tokens = importance.tokens;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto row = importance.row(l);
    for (std::size_t k = 1; k < tokens; ++k) {
      if (row[k] > row[k - 1]) {
        throw InvariantError("allocate_budgets: layer " + std::to_string(l) +
                             " importance is not non-increasing at slot " + std::to_string(k));
      }
    }
  }

  BudgetAllocation alloc;
  alloc.r_target = r_target;
  alloc.total = retention_budget(r_target, layers, tokens);
  alloc.per_layer.assign(layers, 0);

  // Rows are non-increasing, so the global top-B is a k-way merge of layer prefixes.
  using Head = std::tuple<double, std::size_t>;  // (score, layer)
  auto worse = [](const Head& a, const Head& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) > std::get<1>(b);
  };
  std::priority_queue<Head, std::vector<Head>, decltype(worse)> frontier(worse);
  if (tokens > 0) {
    for (std::size_t l = 0; l < layers; ++l) frontier.emplace(importance.at(l, 0), l);
  }
  for (std::size_t taken = 0; taken < alloc.total; ++taken) {
    const auto [score, l] = frontier.top();
    frontier.pop();
    const std::size_t next = ++alloc.per_layer[l];
    if (next < tokens) frontier.emplace(importance.at(l, next), l);
  }
  return alloc;
}

TokenSelection composite_selection(const CompositeIndex& ci, const BudgetAllocation& alloc) {
  if (alloc.per_layer.size() != ci.layers) {
    throw ShapeError("composite_selection: allocation has " +
                     std::to_string(alloc.per_layer.size()) + " layers, index has " +
                     std::to_string(ci.layers));
  }
  TokenSelection sel;
  sel.slots.resize(ci.layers);
  for (std::size_t l = 0; l < ci.layers; ++l) {
    const std::size_t keep = alloc.per_layer[l];
    if (keep > ci.tokens) {
      throw InvariantError("composite_selection: N_l = " + std::to_string(keep) +
                           " exceeds N = " + std::to_string(ci.tokens));
    }
    for (std::size_t h = 0; h < ci.heads; ++h) {
      const auto order = ci.order_row(l, h);
      sel.slots[l].emplace_back(order.begin(), order.begin() + static_cast<long>(keep));
    }
  }
  return sel;
}

CompressedCache gather_cache(const KVCache& full, const TokenSelection& selection) {
  if (selection.layers() != full.layers.size()) {
    throw ShapeError("gather_cache: selection and cache layer counts differ");
  }
  if (!selection.is_structured()) {
    throw InvariantError("gather_cache: selection has unequal row counts within a layer");
  }
  CompressedCache out;
  out.provenance = selection;
  out.source_tokens = full.layers.empty() ? 0 : full.layers.front().rows();
  out.cache.next_position = full.next_position;
  out.cache.layers.resize(full.layers.size());
  for (std::size_t l = 0; l < full.layers.size(); ++l) {
    const auto& src = full.layers[l];
    auto& dst = out.cache.layers[l];
    if (selection.slots[l].size() != src.keys.size()) {
      throw ShapeError("gather_cache: head count mismatch at layer " + std::to_string(l));
    }
    for (std::size_t h = 0; h < src.keys.size(); ++h) {
      const std::size_t d = src.keys[h].cols();
      Matrix keys(0, d);
      Matrix values(0, d);
      for (std::size_t idx : selection.slots[l][h]) {
        if (idx >= src.keys[h].rows()) {
          throw InvariantError("gather_cache: token " + std::to_string(idx) +
                               " outside cache of " + std::to_string(src.keys[h].rows()));
        }
        keys.append_row(src.keys[h].row(idx));
        values.append_row(src.values[h].row(idx));
      }
      dst.keys.push_back(std::move(keys));
      dst.values.push_back(std::move(values));
    }
  }
  return out;
}

CompressedCache compact_cache(const KVCache& cache, const CompositeIndex& ci,
                              const BudgetAllocation& alloc) {
  for (const auto& layer : cache.layers) {
    if (layer.rows() != ci.tokens) {
      throw InvariantError("compact_cache: expects an uncompressed cache of " +
                           std::to_string(ci.tokens) + " rows per layer");
    }
  }
  return gather_cache(cache, composite_selection(ci, alloc));
}

HeadMaskSet unstructured_compress(const ScoreTensor& s, double r_target) {
  if (s.stage != ScoreStage::kFinal) {
    throw UsageError("unstructured_compress: expects final scores");
  }
  const std::size_t per_token_rows = s.layers * s.heads;
  HeadMaskSet out;
  out.budget = retention_budget(r_target, per_token_rows, s.tokens);
  out.mask.layers = s.layers;
  out.mask.kv_heads = s.heads;
  out.mask.tokens = s.tokens;
  out.mask.keep.assign(s.values.size(), 0);
  out.kept_per_head.assign(per_token_rows, 0);

  // Flat index order is (layer, head, token), so index order is the tie rule.
  std::vector<std::size_t> entries(s.values.size());
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
  auto better = [&](std::size_t a, std::size_t b) {
    if (s.values[a] != s.values[b]) return s.values[a] > s.values[b];
    return a < b;
  };
  const auto cut = entries.begin() + static_cast<long>(out.budget);
  std::nth_element(entries.begin(), cut, entries.end(), better);
  for (auto it = entries.begin(); it != cut; ++it) {
    out.mask.keep[*it] = 1;
    ++out.kept_per_head[*it / s.tokens];
  }
  return out;
}

}  // namespace kvc
