// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvcompose/evaluator.hpp"
#include "kvcompose/model.hpp"
#include "kvcompose/pipeline.hpp"
#include "kvcompose/scoring.hpp"

namespace kvc {

enum class ModelKind { kRandom, kInduction, kFile };

struct ModelSpec {
  ModelKind kind = ModelKind::kRandom;
  ModelConfig config;              // random
  std::size_t num_pairs = 8;       // induction
  std::size_t vocab = 32;          // induction
  std::filesystem::path path;      // file (a gen-model bundle)
};

struct TaskSpec {
  TaskKind kind = TaskKind::kAgreement;
  std::size_t count = 32;
  std::uint64_t seed = 1;
  std::size_t context_length = 128;  // agreement
  std::size_t steps = 32;            // agreement
  std::size_t num_pairs = 8;         // recall
};

/// One run, parsed from a strict JSON file. Unknown keys are rejected.
struct RunConfig {
  ModelSpec model;
  TaskSpec tasks;
  Policy policy;
  AggregationChoice aggregation;
  TaskMode task_mode = TaskMode::kTaskAgnostic;
  std::size_t observation_window = 32;
  std::vector<double> grid = default_grid();
  std::vector<double> tolerances = {0.10, 0.20};
  double r_target = 0.5;
  std::filesystem::path output_dir = "out";

  /// Throws ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  /// Throws IoError when unreadable, ConfigError when malformed.
  static RunConfig load(const std::filesystem::path& path);

  /// Fully resolved settings, every default filled in.
  nlohmann::json to_json() const;
  /// to_json() without the output directory; embedded in reports.
  nlohmann::json report_json() const;

  /// Overrides both the task seed and the random model seed.
  void override_seed(std::uint64_t seed);

  SweepSettings sweep_settings() const;
  TaskSet task_set(std::span<const Token> context) const;
};

/// Materializes the model; a file model is read from its bundle.
Model build_model(const ModelSpec& spec);

std::vector<TaskInstance> build_tasks(const Model& model, const RunConfig& config);

/// Parses "0,0.25,0.5" into a grid. Throws ConfigError.
std::vector<double> parse_grid(const std::string& text);

/// Whitespace-separated integer token ids. Throws IoError / ConfigError.
std::vector<Token> read_context(const std::filesystem::path& path, std::size_t vocab);

}  // namespace kvc
