// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kvcompose/model.hpp"

namespace kvc {

enum class TaskMode { kTaskAware, kTaskAgnostic };

/// Token sequences whose attention onto the context drives importance.
struct TaskSet {
  TaskMode mode = TaskMode::kTaskAgnostic;
  std::vector<std::vector<Token>> tasks;  // task-aware only
  std::size_t observation_window = 32;    // task-agnostic only

  static TaskSet aware(std::vector<std::vector<Token>> tasks);
  static TaskSet agnostic(std::size_t window);
};

/// Attention of M task tokens onto N context tokens, per layer and query head.
struct AttentionCapture {
  std::size_t layers = 0;
  std::size_t q_heads = 0;
  std::size_t kv_heads = 0;
  std::size_t context = 0;      // N
  std::size_t task_tokens = 0;  // M
  std::vector<double> weights;  // [L × H_q × N × M]
  std::vector<double> raw_value_norms;        // [L × H_kv × N], ‖v_c‖
  std::vector<double> projected_value_norms;  // [L × H_q × N], ‖v_c W^O_h‖

  double at(std::size_t l, std::size_t h, std::size_t c, std::size_t m) const {
    return weights[((l * q_heads + h) * context + c) * task_tokens + m];
  }
  double raw_norm(std::size_t l, std::size_t kv, std::size_t c) const {
    return raw_value_norms[(l * kv_heads + kv) * context + c];
  }
  double projected_norm(std::size_t l, std::size_t h, std::size_t c) const {
    return projected_value_norms[(l * q_heads + h) * context + c];
  }
};

enum class Agg { kMax, kAvg };
enum class NormVariant { kNone, kValueNorm, kProjectedNorm };
enum class ScoreStage { kAggTask, kAggGroup, kFinal };

const char* to_string(Agg agg);
const char* to_string(NormVariant norm);

/// Scores indexed [layer][head][context token]; heads are query heads at the
/// agg_task stage and kv heads afterwards.
struct ScoreTensor {
  ScoreStage stage = ScoreStage::kAggTask;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::vector<double> values;

  double& at(std::size_t l, std::size_t h, std::size_t c) {
    return values[(l * heads + h) * tokens + c];
  }
  double at(std::size_t l, std::size_t h, std::size_t c) const {
    return values[(l * heads + h) * tokens + c];
  }
  std::span<const double> row(std::size_t l, std::size_t h) const {
    return {values.data() + (l * heads + h) * tokens, tokens};
  }
};

/// Operator choices for the three aggregation points plus the two score tweaks.
/// Defaults: max over task tokens, average elsewhere, mean augmentation on.
struct AggregationChoice {
  Agg task = Agg::kMax;
  Agg group = Agg::kAvg;
  Agg head = Agg::kAvg;
  NormVariant norm = NormVariant::kNone;
  bool mean_augment = true;

  /// e.g. "Agg(max,avg,avg), mean=on, norm=none"
  std::string label() const;
  bool operator==(const AggregationChoice&) const = default;
};

/// All 8 × 2 × 3 ablation combinations in a fixed order.
std::vector<AggregationChoice> ablation_grid();

AttentionCapture collect_attention(const Model& model, std::span<const Token> context,
                                   const TaskSet& task_set);

ScoreTensor aggregate_task(const AttentionCapture& cap, Agg op, NormVariant norm);
ScoreTensor aggregate_group(const ScoreTensor& s, std::size_t kv_heads, Agg op);
ScoreTensor augment_mean(const ScoreTensor& s, bool enabled);

/// Task → group → mean augmentation, in that order.
ScoreTensor score_tokens(const AttentionCapture& cap, const AggregationChoice& choice);

}  // namespace kvc
