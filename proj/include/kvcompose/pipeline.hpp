// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvcompose/composer.hpp"
#include "kvcompose/model.hpp"
#include "kvcompose/scoring.hpp"

namespace kvc {

enum class PolicyKind { kKvCompose, kStreaming, kTova, kSnapKV, kPyramid, kRandom, kUnstructured };

const char* to_string(PolicyKind kind);
/// Throws ConfigError for unknown names.
PolicyKind parse_policy(const std::string& name);

struct BaselineParams {
  std::size_t sinks = 4;
  std::size_t window = 8;  // SnapKV / PyramidKV observation window
  double pyramid_shape = 1.0;
};

struct Policy {
  PolicyKind kind = PolicyKind::kKvCompose;
  BaselineParams params;
  std::uint64_t seed = 0;  // random eviction only
};

/// Everything about a context that does not depend on the target ratio.
struct PreparedContext {
  std::vector<Token> context;
  PrefillResult full;
  std::optional<AttentionCapture> capture;  // from the requested task set
};

PreparedContext prepare_context(const Model& model, std::span<const Token> context,
                                const TaskSet& task_set);

/// Task-agnostic capture of the last `window` rows, read from an existing prefill.
AttentionCapture window_capture(const Model& model, const PrefillResult& full,
                                std::size_t window);

struct CompressionResult {
  CompressedCache compressed;
  std::optional<HeadMaskSet> masks;  // unstructured policy: cache stays full
  std::size_t kept_entries = 0;      // (layer, head, token) rows
  std::size_t full_entries = 0;
  double r_target = 0.0;
  double r_achieved = 0.0;
  std::string summary;
};

/// Applies one policy at one target ratio. Unstructured results keep the full
/// cache and carry masks instead.
CompressionResult compress_prepared(const Model& model, const PreparedContext& prepared,
                                    const AggregationChoice& choice, double r_target,
                                    const Policy& policy);

/// collect → aggregate → augment → compose → allocate → compact, or a baseline selector.
CompressionResult compress(const Model& model, std::span<const Token> context,
                           const TaskSet& task_set, const AggregationChoice& choice,
                           double r_target, const Policy& policy);

}  // namespace kvc
