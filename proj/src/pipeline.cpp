// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "kvcompose/baselines.hpp"
#include "kvcompose/errors.hpp"

namespace kvc {

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kKvCompose:
      return "kvcompose";
    case PolicyKind::kStreaming:
      return "streaming";
    case PolicyKind::kTova:
      return "tova";
    case PolicyKind::kSnapKV:
      return "snapkv";
    case PolicyKind::kPyramid:
      return "pyramid";
    case PolicyKind::kRandom:
      return "random";
    case PolicyKind::kUnstructured:
      return "unstructured";
  }
  return "kvcompose";
}

PolicyKind parse_policy(const std::string& name) {
  for (auto kind : {PolicyKind::kKvCompose, PolicyKind::kStreaming, PolicyKind::kTova,
                    PolicyKind::kSnapKV, PolicyKind::kPyramid, PolicyKind::kRandom,
                    PolicyKind::kUnstructured}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown policy '" + name + "'");
}

PreparedContext prepare_context(const Model& model, std::span<const Token> context,
                                const TaskSet& task_set) {
  PreparedContext prepared;
  prepared.context.assign(context.begin(), context.end());
  prepared.full = prefill(model, context);
  if (task_set.mode == TaskMode::kTaskAgnostic) {
    const std::size_t window = std::min(task_set.observation_window, context.size());
    if (window == 0) throw UsageError("prepare_context: observation window must be positive");
    prepared.capture = window_capture(model, prepared.full, window);
  } else {
    prepared.capture = collect_attention(model, context, task_set);
  }
  return prepared;
}

AttentionCapture window_capture(const Model& model, const PrefillResult& full,
                                std::size_t window) {
  const auto& cfg = model.config;
  const std::size_t n = full.attention.tokens;
  if (window == 0 || window > n) throw UsageError("window_capture: window must lie in [1, N]");
  AttentionCapture cap;
  cap.layers = cfg.layers;
  cap.q_heads = cfg.q_heads;
  cap.kv_heads = cfg.kv_heads;
  cap.context = n;
  cap.task_tokens = window;
  cap.weights.assign(cfg.layers * cfg.q_heads * n * window, 0.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (std::size_t h = 0; h < cfg.q_heads; ++h) {
      const Matrix& w = full.attention.at(l, h);
      for (std::size_t m = 0; m < window; ++m) {
        const auto row = w.row(n - window + m);
        for (std::size_t c = 0; c < n; ++c) {
          cap.weights[((l * cfg.q_heads + h) * n + c) * window + m] = row[c];
        }
      }
    }
  }
  cap.raw_value_norms.assign(cfg.layers * cfg.kv_heads * n, 0.0);
  cap.projected_value_norms.assign(cfg.layers * cfg.q_heads * n, 0.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& values = full.cache.layers[l].values;
    for (std::size_t g = 0; g < cfg.kv_heads; ++g) {
      for (std::size_t c = 0; c < n; ++c) {
        cap.raw_value_norms[(l * cfg.kv_heads + g) * n + c] = l2_norm(values[g].row(c));
      }
    }
    for (std::size_t h = 0; h < cfg.q_heads; ++h) {
      const auto& v = values[h / cfg.group_size()];
      for (std::size_t c = 0; c < n; ++c) {
        cap.projected_value_norms[(l * cfg.q_heads + h) * n + c] =
            l2_norm(vecmat(v.row(c), model.layers[l].wo[h]));
      }
    }
  }
  return cap;
}

namespace {

std::string format_summary(const CompressionResult& r, PolicyKind kind,
                           const std::vector<std::size_t>& per_layer) {
  std::ostringstream out;
  out << "policy=" << to_string(kind) << " r_target=" << r.r_target
      << " r_achieved=" << r.r_achieved << " kept=" << r.kept_entries << "/" << r.full_entries
      << " N_l=[";
  for (std::size_t l = 0; l < per_layer.size(); ++l) out << (l ? "," : "") << per_layer[l];
  out << "]";
  return out.str();
}

TokenSelection snapkv_with_budgets(const Model& model, const PreparedContext& prepared,
                                   const std::vector<std::size_t>& budgets,
                                   std::size_t window) {
  const std::size_t w = std::clamp<std::size_t>(window, 1, prepared.context.size());
  const auto cap = window_capture(model, prepared.full, w);
  // Layers whose budget is below the window keep a shorter window.
  std::vector<std::size_t> windows;
  for (std::size_t b : budgets) windows.push_back(std::min(w, b));
  return snapkv_select(cap, budgets, windows);
}

}  // namespace

CompressionResult compress_prepared(const Model& model, const PreparedContext& prepared,
                                    const AggregationChoice& choice, double r_target,
                                    const Policy& policy) {
  const auto& cfg = model.config;
  const std::size_t n = prepared.context.size();
  CompressionResult result;
  result.r_target = r_target;
  result.full_entries = cfg.layers * cfg.kv_heads * n;

  TokenSelection selection;
  switch (policy.kind) {
    case PolicyKind::kKvCompose: {
      if (!prepared.capture) throw UsageError("compress: kvcompose needs an attention capture");
      const auto scores = score_tokens(*prepared.capture, choice);
      const auto ci = composite_indices(scores);
      const auto alloc = allocate_budgets(layer_importance(ci, choice.head), r_target);
      selection = composite_selection(ci, alloc);
      break;
    }
    case PolicyKind::kUnstructured: {
      if (!prepared.capture) throw UsageError("compress: unstructured needs an attention capture");
      const auto scores = score_tokens(*prepared.capture, choice);
      auto masks = unstructured_compress(scores, r_target);
      result.compressed.cache = prepared.full.cache;
      result.compressed.source_tokens = n;
      result.kept_entries = masks.mask.count();
      result.r_achieved = 1.0 - static_cast<double>(result.kept_entries) /
                                    static_cast<double>(result.full_entries);
      result.summary = format_summary(result, policy.kind, prepared.full.cache.rows_per_layer());
      result.masks = std::move(masks);
      return result;
    }
    case PolicyKind::kStreaming: {
      const auto budgets = uniform_budgets(cfg.layers, n, r_target);
      std::vector<std::vector<std::size_t>> per_layer;
      for (std::size_t b : budgets) {
        per_layer.push_back(streaming_select(n, b, std::min(policy.params.sinks, b)));
      }
      selection = TokenSelection::shared(per_layer, cfg.kv_heads);
      break;
    }
    case PolicyKind::kTova:
      selection = tova_select(model, prepared.full, uniform_budgets(cfg.layers, n, r_target));
      break;
    case PolicyKind::kSnapKV:
      selection = snapkv_with_budgets(model, prepared, uniform_budgets(cfg.layers, n, r_target),
                                      policy.params.window);
      break;
    case PolicyKind::kPyramid:
      selection = snapkv_with_budgets(
          model, prepared, pyramid_budgets(cfg.layers, n, r_target, policy.params.pyramid_shape),
          policy.params.window);
      break;
    case PolicyKind::kRandom:
      selection = random_select(cfg.layers, cfg.kv_heads, n,
                                uniform_budgets(cfg.layers, n, r_target), policy.seed);
      break;
  }

  result.compressed = gather_cache(prepared.full.cache, selection);
  result.kept_entries = selection.total_rows();
  result.r_achieved = 1.0 - static_cast<double>(result.kept_entries) /
                                static_cast<double>(result.full_entries);
  result.summary = format_summary(result, policy.kind, selection.per_layer());
  return result;
}

CompressionResult compress(const Model& model, std::span<const Token> context,
                           const TaskSet& task_set, const AggregationChoice& choice,
                           double r_target, const Policy& policy) {
  const auto prepared = prepare_context(model, context, task_set);
  return compress_prepared(model, prepared, choice, r_target, policy);
}

}  // namespace kvc
