// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvcompose/composer.hpp"
#include "kvcompose/model.hpp"
#include "kvcompose/scoring.hpp"

namespace kvc {

/// B_total split evenly over layers; the first B_total mod L layers get one extra.
std::vector<std::size_t> uniform_budgets(std::size_t layers, std::size_t tokens, double r);

/// Attention sinks plus a recency window, ascending.
std::vector<std::size_t> streaming_select(std::size_t n, std::size_t budget, std::size_t sinks);

/// Online eviction replayed over a prefill: each time a layer's running set
/// exceeds its budget the token with the lowest head-averaged attention from
/// the current query is dropped (ties drop the later token).
TokenSelection tova_select(const Model& model, const PrefillResult& full,
                           std::span<const std::size_t> budgets);
TokenSelection tova_select(const Model& model, std::span<const Token> context,
                           std::size_t budget);

/// Per kv head: the last `window` context tokens plus the top remaining tokens
/// by max attention over the last `window` captured query rows (group-averaged).
TokenSelection snapkv_select(const AttentionCapture& cap, std::span<const std::size_t> budgets,
                             std::size_t window);
TokenSelection snapkv_select(const AttentionCapture& cap, std::size_t budget_per_head,
                             std::size_t window);
/// Per-layer windows, for budgets that fall below the configured window.
TokenSelection snapkv_select(const AttentionCapture& cap, std::span<const std::size_t> budgets,
                             std::span<const std::size_t> windows);

/// Linearly decreasing per-layer budgets summing to ⌊(1 − r)·L·N⌋.
/// shape = 0 gives the uniform split; larger shapes tilt budget toward early layers.
std::vector<std::size_t> pyramid_budgets(std::size_t layers, std::size_t tokens, double r,
                                         double shape);

/// Uniform-random structured eviction: per layer one random token subset shared by all heads.
TokenSelection random_select(std::size_t layers, std::size_t kv_heads, std::size_t tokens,
                             std::span<const std::size_t> budgets, std::uint64_t seed);

}  // namespace kvc
