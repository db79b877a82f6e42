// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvcompose/model.hpp"
#include "kvcompose/scoring.hpp"

namespace kvc {

/// ⌊(1 − r)·layers·tokens⌋, robust to the representation error of r (e.g. 1 − 0.9).
std::size_t retention_budget(double r_target, std::size_t layers, std::size_t tokens);

/// Per-(layer, kv head) descending importance order and the scores in that order.
struct CompositeIndex {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::vector<std::size_t> order;     // [L × H_kv × N], permutation per (l, h)
  std::vector<double> sorted_scores;  // [L × H_kv × N], non-increasing per (l, h)

  std::span<const std::size_t> order_row(std::size_t l, std::size_t h) const {
    return {order.data() + (l * heads + h) * tokens, tokens};
  }
  std::span<const double> score_row(std::size_t l, std::size_t h) const {
    return {sorted_scores.data() + (l * heads + h) * tokens, tokens};
  }
};

/// Importance of each composite slot, [L × N], non-increasing per layer.
struct LayerImportance {
  std::size_t layers = 0;
  std::size_t tokens = 0;
  std::vector<double> values;

  double at(std::size_t l, std::size_t k) const { return values[l * tokens + k]; }
  std::span<const double> row(std::size_t l) const {
    return {values.data() + l * tokens, tokens};
  }
};

struct BudgetAllocation {
  double r_target = 0.0;
  std::size_t total = 0;               // B_total
  std::vector<std::size_t> per_layer;  // N_ℓ
};

/// Original context indices retained per layer and kv head, in slot order.
/// A structured selection has equal lengths across the heads of each layer.
struct TokenSelection {
  std::vector<std::vector<std::vector<std::size_t>>> slots;  // [layer][kv head][slot]

  std::size_t layers() const { return slots.size(); }
  bool is_structured() const;
  std::vector<std::size_t> per_layer() const;
  /// Retained (head, token) rows summed over layers and heads.
  std::size_t total_rows() const;

  /// The same token list for every kv head of each layer.
  static TokenSelection shared(const std::vector<std::vector<std::size_t>>& per_layer,
                               std::size_t kv_heads);
};

/// A structured cache built from a full one plus, for every slot, the source token.
struct CompressedCache {
  KVCache cache;
  TokenSelection provenance;
  std::size_t source_tokens = 0;
};

/// Per-head keep masks for the unstructured variant (attention patching only).
struct HeadMaskSet {
  KeyMask mask;
  std::vector<std::size_t> kept_per_head;  // [L × H_kv]
  std::size_t budget = 0;
};

CompositeIndex composite_indices(const ScoreTensor& s);
LayerImportance layer_importance(const CompositeIndex& ci, Agg op);

/// Keeps the top-B_total entries of the global pool of layer-importance
/// values; ties go to the lower layer, then the lower slot.
BudgetAllocation allocate_budgets(const LayerImportance& importance, double r_target);

/// Slots 0..N_ℓ−1 of every head's composite order.
TokenSelection composite_selection(const CompositeIndex& ci, const BudgetAllocation& alloc);

/// Copies the selected rows of a full (uncompressed) cache.
CompressedCache gather_cache(const KVCache& full, const TokenSelection& selection);

CompressedCache compact_cache(const KVCache& cache, const CompositeIndex& ci,
                              const BudgetAllocation& alloc);

/// Global top-⌊(1 − r)·L·H_kv·N⌋ over every (layer, head, token) score.
HeadMaskSet unstructured_compress(const ScoreTensor& s, double r_target);

}  // namespace kvc
