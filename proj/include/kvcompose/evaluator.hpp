// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvcompose/model.hpp"
#include "kvcompose/pipeline.hpp"
#include "kvcompose/scoring.hpp"

namespace kvc {

enum class TaskKind { kRecall, kAgreement };

const char* to_string(TaskKind kind);

/// One evaluation prompt. The context is cached (and compressed); decoding starts
/// from `query` at position context.size().
///  recall:    reference = {expected value token}
///  agreement: reference = full-cache greedy continuation of T tokens
struct TaskInstance {
  std::string id;
  TaskKind kind = TaskKind::kRecall;
  std::vector<Token> context;
  Token query = 0;
  std::vector<Token> reference;
};

/// Induction prompts: `num_pairs` distinct keys from [0, vocab/2), values from
/// [vocab/2, vocab), query = one of the keys.
std::vector<TaskInstance> make_recall_tasks(std::size_t num_pairs, std::size_t vocab,
                                            std::size_t count, std::uint64_t seed);

/// Random contexts with references from the full-cache greedy run.
std::vector<TaskInstance> make_agreement_tasks(const Model& model, std::size_t context_length,
                                               std::size_t steps, std::size_t count,
                                               std::uint64_t seed);

/// Key plus value scalars: layers · kv_heads · tokens · head_dim · 2.
std::uint64_t cache_entry_count(std::uint64_t layers, std::uint64_t kv_heads,
                                std::uint64_t tokens, std::uint64_t head_dim);
std::uint64_t cache_entry_count(const KVCache& cache);

/// 1 − |compressed| / |full|.
double compression_ratio(const KVCache& compressed, const KVCache& full);

/// Task reward in [0, 1] using `cache` (which is not modified).
double reward(const Model& model, const KVCache& cache, const TaskInstance& task,
              const KeyMask* mask = nullptr);

struct TaskOutcome {
  double reward = 0.0;
  double kl = 0.0;  // mean KL(full ‖ compressed) over decode steps
};

/// Step logits of the full-cache teacher-forced run, computed once per task.
std::vector<std::vector<double>> reference_logits(const Model& model, const KVCache& full,
                                                  const TaskInstance& task);

TaskOutcome evaluate_task(const Model& model, const std::vector<std::vector<double>>& full_logits,
                          const KVCache& compressed, const KeyMask* mask,
                          const TaskInstance& task);

struct EpsilonResult {
  double value = 0.0;
  std::size_t excluded = 0;  // tasks with zero full-cache reward
};

/// Mean relative degradation; tasks whose full reward is 0 are skipped with a warning.
EpsilonResult epsilon_detail(std::span<const double> full_rewards,
                             std::span<const double> comp_rewards);
double epsilon(std::span<const double> full_rewards, std::span<const double> comp_rewards);

struct CurvePoint {
  double r_target = 0.0;
  double r_achieved = 0.0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double epsilon = 0.0;
  double kl_mean = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

/// {0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}
std::vector<double> default_grid();

/// Trapezoidal area of reward over r, divided by the r span.
double auc(std::span<const CurvePoint> curve);

struct ToleranceResult {
  double tolerance = 0.0;
  double grid_ratio = 0.0;          // largest grid r with ε ≤ tolerance
  double interpolated_ratio = 0.0;  // linear refinement toward the next grid point

  bool operator==(const ToleranceResult&) const = default;
};

ToleranceResult max_ratio_under_tolerance(std::span<const CurvePoint> curve, double tolerance);

struct SweepSettings {
  Policy policy;
  AggregationChoice aggregation;
  TaskMode task_mode = TaskMode::kTaskAgnostic;
  std::size_t observation_window = 32;
  std::vector<double> grid = default_grid();
  std::vector<double> tolerances = {0.10, 0.20};
};

/// Task set used to score one task's context.
TaskSet task_set_for(const TaskInstance& task, const SweepSettings& settings);

std::vector<CurvePoint> sweep(const Model& model, std::span<const TaskInstance> tasks,
                              const SweepSettings& settings);

struct EvalReport {
  std::string policy;
  std::vector<CurvePoint> grid;
  double auc = 0.0;
  std::vector<ToleranceResult> max_ratio;
  std::vector<std::uint64_t> seeds;
  nlohmann::json config;
  std::vector<std::string> notes;

  bool operator==(const EvalReport&) const = default;
};

EvalReport make_report(const SweepSettings& settings, std::vector<CurvePoint> curve,
                       std::vector<std::uint64_t> seeds, nlohmann::json config);

/// Worker count from KVCOMPOSE_THREADS (capped by hardware), at least 1.
std::size_t worker_count();

}  // namespace kvc
