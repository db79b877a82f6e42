// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/scoring.hpp"

#include <algorithm>
#include <string>

#include "kvcompose/errors.hpp"

namespace kvc {

namespace {

double reduce(Agg op, double acc, double x) {
  return op == Agg::kMax ? std::max(acc, x) : acc + x;
}

double finish(Agg op, double acc, std::size_t count) {
  return op == Agg::kMax ? acc : acc / static_cast<double>(count);
}

}  // namespace

const char* to_string(Agg agg) { return agg == Agg::kMax ? "max" : "avg"; }

const char* to_string(NormVariant norm) {
  switch (norm) {
    case NormVariant::kNone:
      return "none";
    case NormVariant::kValueNorm:
      return "v-norm";
    case NormVariant::kProjectedNorm:
      return "vo-norm";
  }
  return "none";
}

TaskSet TaskSet::aware(std::vector<std::vector<Token>> tasks) {
  TaskSet ts;
  ts.mode = TaskMode::kTaskAware;
  ts.tasks = std::move(tasks);
  return ts;
}

TaskSet TaskSet::agnostic(std::size_t window) {
  TaskSet ts;
  ts.mode = TaskMode::kTaskAgnostic;
  ts.observation_window = window;
  return ts;
}

std::string AggregationChoice::label() const {
  return std::string("Agg(") + to_string(task) + "," + to_string(group) + "," +
         to_string(head) + "), mean=" + (mean_augment ? "on" : "off") +
         ", norm=" + to_string(norm);
}

std::vector<AggregationChoice> ablation_grid() {
  std::vector<AggregationChoice> grid;
  const Agg ops[] = {Agg::kMax, Agg::kAvg};
  const NormVariant norms[] = {NormVariant::kNone, NormVariant::kValueNorm,
                               NormVariant::kProjectedNorm};
  for (Agg task : ops) {
    for (Agg group : ops) {
      for (Agg head : ops) {
        for (bool mean : {true, false}) {
          for (NormVariant norm : norms) grid.push_back({task, group, head, norm, mean});
        }
      }
    }
  }
  return grid;
}

AttentionCapture collect_attention(const Model& model, std::span<const Token> context,
                                   const TaskSet& task_set) {
  const auto& cfg = model.config;
  const std::size_t n = context.size();
  if (n == 0) throw UsageError("collect_attention: empty context");

  AttentionCapture cap;
  cap.layers = cfg.layers;
  cap.q_heads = cfg.q_heads;
  cap.kv_heads = cfg.kv_heads;
  cap.context = n;

  // Each source is (prefill, first query row, row count).
  std::vector<PrefillResult> runs;
  std::vector<std::size_t> first_rows;
  if (task_set.mode == TaskMode::kTaskAgnostic) {
    const std::size_t w = task_set.observation_window;
    if (w == 0) throw UsageError("collect_attention: observation window must be positive");
    if (w > n) {
      throw UsageError("collect_attention: observation window " + std::to_string(w) +
                       " exceeds context length " + std::to_string(n));
    }
    runs.push_back(prefill(model, context));
    first_rows.push_back(n - w);
    cap.task_tokens = w;
  } else {
    if (task_set.tasks.empty()) throw UsageError("collect_attention: task-aware set is empty");
    for (const auto& task : task_set.tasks) {
      if (task.empty()) throw UsageError("collect_attention: empty task");
      std::vector<Token> joined(context.begin(), context.end());
      joined.insert(joined.end(), task.begin(), task.end());
      runs.push_back(prefill(model, joined));
      first_rows.push_back(n);
      cap.task_tokens += task.size();
    }
  }

  const std::size_t m_total = cap.task_tokens;
  cap.weights.assign(cfg.layers * cfg.q_heads * n * m_total, 0.0);
  std::size_t m_offset = 0;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& rec = runs[r].attention;
    const std::size_t rows = rec.tokens - first_rows[r];
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (std::size_t h = 0; h < cfg.q_heads; ++h) {
        const Matrix& w = rec.at(l, h);
        for (std::size_t m = 0; m < rows; ++m) {
          const auto row = w.row(first_rows[r] + m);
          for (std::size_t c = 0; c < n; ++c) {
            cap.weights[((l * cfg.q_heads + h) * n + c) * m_total + m_offset + m] = row[c];
          }
        }
      }
    }
    m_offset += rows;
  }

  // Context value rows are identical across runs (causal), so the first suffices.
  const KVCache& cache = runs.front().cache;
  cap.raw_value_norms.assign(cfg.layers * cfg.kv_heads * n, 0.0);
  cap.projected_value_norms.assign(cfg.layers * cfg.q_heads * n, 0.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (std::size_t g = 0; g < cfg.kv_heads; ++g) {
      for (std::size_t c = 0; c < n; ++c) {
        cap.raw_value_norms[(l * cfg.kv_heads + g) * n + c] =
            l2_norm(cache.layers[l].values[g].row(c));
      }
    }
    for (std::size_t h = 0; h < cfg.q_heads; ++h) {
      const std::size_t g = h / cfg.group_size();
      for (std::size_t c = 0; c < n; ++c) {
        const auto projected = vecmat(cache.layers[l].values[g].row(c), model.layers[l].wo[h]);
        cap.projected_value_norms[(l * cfg.q_heads + h) * n + c] = l2_norm(projected);
      }
    }
  }
  return cap;
}

ScoreTensor aggregate_task(const AttentionCapture& cap, Agg op, NormVariant norm) {
  if (cap.task_tokens == 0) throw UsageError("aggregate_task: no task tokens captured");
  const std::size_t group = cap.q_heads / cap.kv_heads;
  ScoreTensor s;
  s.stage = ScoreStage::kAggTask;
  s.layers = cap.layers;
  s.heads = cap.q_heads;
  s.tokens = cap.context;
  s.values.assign(s.layers * s.heads * s.tokens, 0.0);
  for (std::size_t l = 0; l < cap.layers; ++l) {
    for (std::size_t h = 0; h < cap.q_heads; ++h) {
      for (std::size_t c = 0; c < cap.context; ++c) {
        double weight = 1.0;
        if (norm == NormVariant::kValueNorm) {
          weight = cap.raw_norm(l, h / group, c);
        } else if (norm == NormVariant::kProjectedNorm) {
          weight = cap.projected_norm(l, h, c);
        }
        double acc = 0.0;
        for (std::size_t m = 0; m < cap.task_tokens; ++m) {
          acc = reduce(op, acc, cap.at(l, h, c, m) * weight);
        }
        s.at(l, h, c) = finish(op, acc, cap.task_tokens);
      }
    }
  }
  return s;
}

ScoreTensor aggregate_group(const ScoreTensor& s, std::size_t kv_heads, Agg op) {
  if (s.stage != ScoreStage::kAggTask) throw UsageError("aggregate_group: expects agg_task scores");
  if (kv_heads == 0 || s.heads % kv_heads != 0) {
    throw ShapeError("aggregate_group: " + std::to_string(s.heads) +
                     " query heads do not split into " + std::to_string(kv_heads) + " groups");
  }
  const std::size_t group = s.heads / kv_heads;
  ScoreTensor out;
  out.stage = ScoreStage::kAggGroup;
  out.layers = s.layers;
  out.heads = kv_heads;
  out.tokens = s.tokens;
  out.values.assign(out.layers * out.heads * out.tokens, 0.0);
  for (std::size_t l = 0; l < s.layers; ++l) {
    for (std::size_t g = 0; g < kv_heads; ++g) {
      for (std::size_t c = 0; c < s.tokens; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < group; ++i) acc = reduce(op, acc, s.at(l, g * group + i, c));
        out.at(l, g, c) = finish(op, acc, group);
      }
    }
  }
  return out;
}

ScoreTensor augment_mean(const ScoreTensor& s, bool enabled) {
  if (s.stage != ScoreStage::kAggGroup) throw UsageError("augment_mean: expects agg_group scores");
  ScoreTensor out = s;
  out.stage = ScoreStage::kFinal;
  if (!enabled) return out;
  for (std::size_t l = 0; l < s.layers; ++l) {
    for (std::size_t c = 0; c < s.tokens; ++c) {
      double sum = 0.0;
      for (std::size_t h = 0; h < s.heads; ++h) sum += s.at(l, h, c);
      const double mean = sum / static_cast<double>(s.heads);
      for (std::size_t h = 0; h < s.heads; ++h) out.at(l, h, c) = s.at(l, h, c) + mean;
    }
  }
  return out;
}

ScoreTensor score_tokens(const AttentionCapture& cap, const AggregationChoice& choice) {
  const auto per_task = aggregate_task(cap, choice.task, choice.norm);
  const auto per_group = aggregate_group(per_task, cap.kv_heads, choice.group);
  return augment_mean(per_group, choice.mean_augment);
}

}  // namespace kvc
