// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <string>
#include <thread>

#include "kvcompose/errors.hpp"

namespace kvc {

namespace {

std::vector<double> log_softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double x : logits) total += std::exp(x - peak);
  const double log_z = peak + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

double kl_divergence(std::span<const double> p_logits, std::span<const double> q_logits) {
  const auto lp = log_softmax(p_logits);
  const auto lq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return std::max(kl, 0.0);
}

// Decoder inputs for the teacher-forced run: query then all but the last reference token.
std::vector<Token> step_inputs(const TaskInstance& task) {
  std::vector<Token> inputs{task.query};
  if (task.kind == TaskKind::kAgreement && !task.reference.empty()) {
    inputs.insert(inputs.end(), task.reference.begin(), task.reference.end() - 1);
  }
  return inputs;
}

std::vector<std::vector<double>> run_steps(const Model& model, const KVCache& cache,
                                           const TaskInstance& task, const KeyMask* mask) {
  KVCache work = cache;
  std::vector<std::vector<double>> logits;
  std::size_t position = task.context.size();
  for (Token t : step_inputs(task)) logits.push_back(decode_step(model, work, t, position++, mask));
  return logits;
}

double score_steps(const std::vector<std::vector<double>>& logits, const TaskInstance& task) {
  if (task.reference.empty()) throw UsageError("reward: task has no reference tokens");
  std::size_t hits = 0;
  const std::size_t steps = task.kind == TaskKind::kRecall ? 1 : task.reference.size();
  for (std::size_t s = 0; s < steps; ++s) {
    if (argmax(logits[s]) == task.reference[s]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(steps);
}

template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < count; i = next++) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

const char* to_string(TaskKind kind) {
  return kind == TaskKind::kRecall ? "recall" : "agreement";
}

std::vector<TaskInstance> make_recall_tasks(std::size_t num_pairs, std::size_t vocab,
                                            std::size_t count, std::uint64_t seed) {
  const std::size_t half = vocab / 2;
  if (num_pairs == 0 || half < num_pairs) {
    throw ConfigError("recall tasks: need num_pairs in [1, vocab/2]");
  }
  SeededRng rng(seed);
  std::vector<TaskInstance> tasks;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<Token> keys(half);
    std::iota(keys.begin(), keys.end(), Token{0});
    rng.shuffle(keys);
    keys.resize(num_pairs);
    TaskInstance task;
    task.id = "recall-" + std::to_string(seed) + "-" + std::to_string(i);
    task.kind = TaskKind::kRecall;
    std::vector<Token> values;
    for (std::size_t p = 0; p < num_pairs; ++p) {
      values.push_back(static_cast<Token>(half + rng.below(vocab - half)));
      task.context.push_back(keys[p]);
      task.context.push_back(values.back());
    }
    const std::size_t pick = static_cast<std::size_t>(rng.below(num_pairs));
    task.query = keys[pick];
    task.reference = {values[pick]};
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<TaskInstance> make_agreement_tasks(const Model& model, std::size_t context_length,
                                               std::size_t steps, std::size_t count,
                                               std::uint64_t seed) {
  if (context_length == 0 || steps == 0) {
    throw ConfigError("agreement tasks: context_length and steps must be positive");
  }
  if (context_length + steps > model.config.max_context) {
    throw ConfigError("agreement tasks: context plus steps exceed max context");
  }
  SeededRng rng(seed);
  std::vector<TaskInstance> tasks;
  for (std::size_t i = 0; i < count; ++i) {
    TaskInstance task;
    task.id = "agreement-" + std::to_string(seed) + "-" + std::to_string(i);
    task.kind = TaskKind::kAgreement;
    for (std::size_t t = 0; t < context_length; ++t) {
      task.context.push_back(static_cast<Token>(rng.below(model.config.vocab)));
    }
    task.query = static_cast<Token>(rng.below(model.config.vocab));
    KVCache cache = prefill(model, task.context).cache;
    task.reference = greedy_decode(model, cache, task.query, steps);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::uint64_t cache_entry_count(std::uint64_t layers, std::uint64_t kv_heads,
                                std::uint64_t tokens, std::uint64_t head_dim) {
  return layers * kv_heads * tokens * head_dim * 2;
}

std::uint64_t cache_entry_count(const KVCache& cache) {
  std::uint64_t total = 0;
  for (const auto& layer : cache.layers) {
    for (std::size_t h = 0; h < layer.keys.size(); ++h) {
      total += layer.keys[h].rows() * layer.keys[h].cols();
      total += layer.values[h].rows() * layer.values[h].cols();
    }
  }
  return total;
}

double compression_ratio(const KVCache& compressed, const KVCache& full) {
  if (compressed.layers.size() != full.layers.size()) {
    throw ShapeError("compression_ratio: caches have different layer counts");
  }
  const std::uint64_t full_entries = cache_entry_count(full);
  if (full_entries == 0) throw UsageError("compression_ratio: full cache is empty");
  return 1.0 - static_cast<double>(cache_entry_count(compressed)) /
                   static_cast<double>(full_entries);
}

double reward(const Model& model, const KVCache& cache, const TaskInstance& task,
              const KeyMask* mask) {
  return score_steps(run_steps(model, cache, task, mask), task);
}

std::vector<std::vector<double>> reference_logits(const Model& model, const KVCache& full,
                                                  const TaskInstance& task) {
  return run_steps(model, full, task, nullptr);
}

TaskOutcome evaluate_task(const Model& model, const std::vector<std::vector<double>>& full_logits,
                          const KVCache& compressed, const KeyMask* mask,
                          const TaskInstance& task) {
  const auto logits = run_steps(model, compressed, task, mask);
  TaskOutcome out;
  out.reward = score_steps(logits, task);
  for (std::size_t s = 0; s < logits.size(); ++s) out.kl += kl_divergence(full_logits[s], logits[s]);
  out.kl /= static_cast<double>(logits.size());
  return out;
}

EpsilonResult epsilon_detail(std::span<const double> full_rewards,
                             std::span<const double> comp_rewards) {
  if (full_rewards.size() != comp_rewards.size()) {
    throw UsageError("epsilon: reward vectors differ in length");
  }
  EpsilonResult result;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < full_rewards.size(); ++i) {
    if (full_rewards[i] == 0.0) {
      ++result.excluded;
      continue;
    }
    sum += (full_rewards[i] - comp_rewards[i]) / full_rewards[i];
    ++used;
  }
  if (result.excluded > 0) {
    std::cerr << "warning: epsilon skipped " << result.excluded
              << " task(s) with zero full-cache reward\n";
  }
  result.value = used == 0 ? 0.0 : sum / static_cast<double>(used);
  return result;
}

double epsilon(std::span<const double> full_rewards, std::span<const double> comp_rewards) {
  return epsilon_detail(full_rewards, comp_rewards).value;
}

std::vector<double> default_grid() { return {0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

double auc(std::span<const CurvePoint> curve) {
  if (curve.size() < 2) throw UsageError("auc: needs at least two curve points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double width = curve[i].r_target - curve[i - 1].r_target;
    if (!(width > 0.0)) throw UsageError("auc: ratios must be strictly increasing");
    area += 0.5 * width * (curve[i].reward_mean + curve[i - 1].reward_mean);
  }
  return area / (curve.back().r_target - curve.front().r_target);
}

ToleranceResult max_ratio_under_tolerance(std::span<const CurvePoint> curve, double tolerance) {
  ToleranceResult out;
  out.tolerance = tolerance;
  if (curve.empty() || curve.front().r_target != 0.0) {
    throw UsageError("max_ratio_under_tolerance: curve must start at r = 0");
  }
  std::size_t best = curve.size();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].epsilon <= tolerance) best = i;
  }
  if (best == curve.size()) return out;  // nothing passes
  out.grid_ratio = curve[best].r_target;
  out.interpolated_ratio = out.grid_ratio;
  if (best + 1 < curve.size()) {
    const auto& pass = curve[best];
    const auto& fail = curve[best + 1];
    const double t = (tolerance - pass.epsilon) / (fail.epsilon - pass.epsilon);
    out.interpolated_ratio = pass.r_target + t * (fail.r_target - pass.r_target);
  }
  return out;
}

TaskSet task_set_for(const TaskInstance& task, const SweepSettings& settings) {
  if (settings.task_mode == TaskMode::kTaskAware) return TaskSet::aware({{task.query}});
  return TaskSet::agnostic(std::min(settings.observation_window, task.context.size()));
}

std::vector<CurvePoint> sweep(const Model& model, std::span<const TaskInstance> tasks,
                              const SweepSettings& settings) {
  if (tasks.empty()) throw UsageError("sweep: no tasks");
  if (settings.grid.empty()) throw UsageError("sweep: empty ratio grid");
  if (!std::is_sorted(settings.grid.begin(), settings.grid.end())) {
    throw UsageError("sweep: ratio grid must be sorted ascending");
  }
  const std::size_t points = settings.grid.size();
  const std::size_t count = tasks.size();
  // [point][task]
  std::vector<std::vector<double>> rewards(points, std::vector<double>(count));
  std::vector<std::vector<double>> kls(points, std::vector<double>(count));
  std::vector<std::vector<double>> ratios(points, std::vector<double>(count));
  std::vector<double> full_rewards(count);

  parallel_for(count, [&](std::size_t i) {
    const auto& task = tasks[i];
    const auto prepared = prepare_context(model, task.context, task_set_for(task, settings));
    const auto full_logits = reference_logits(model, prepared.full.cache, task);
    full_rewards[i] = score_steps(full_logits, task);
    for (std::size_t p = 0; p < points; ++p) {
      Policy policy = settings.policy;
      policy.seed = derive_seed(settings.policy.seed, i * points + p);
      const auto result =
          compress_prepared(model, prepared, settings.aggregation, settings.grid[p], policy);
      const KeyMask* mask = result.masks ? &result.masks->mask : nullptr;
      const auto outcome =
          evaluate_task(model, full_logits, result.compressed.cache, mask, task);
      rewards[p][i] = outcome.reward;
      kls[p][i] = outcome.kl;
      ratios[p][i] = result.r_achieved;
    }
  });

  std::vector<CurvePoint> curve;
  for (std::size_t p = 0; p < points; ++p) {
    CurvePoint point;
    point.r_target = settings.grid[p];
    const double n = static_cast<double>(count);
    point.r_achieved = std::accumulate(ratios[p].begin(), ratios[p].end(), 0.0) / n;
    point.reward_mean = std::accumulate(rewards[p].begin(), rewards[p].end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards[p]) var += (r - point.reward_mean) * (r - point.reward_mean);
    point.reward_std = std::sqrt(var / n);
    point.epsilon = epsilon(full_rewards, rewards[p]);
    point.kl_mean = std::accumulate(kls[p].begin(), kls[p].end(), 0.0) / n;
    curve.push_back(point);
  }
  return curve;
}

EvalReport make_report(const SweepSettings& settings, std::vector<CurvePoint> curve,
                       std::vector<std::uint64_t> seeds, nlohmann::json config) {
  EvalReport report;
  report.policy = to_string(settings.policy.kind);
  report.grid = std::move(curve);
  report.auc = report.grid.size() >= 2 ? auc(report.grid) : report.grid.front().reward_mean;
  if (report.grid.front().r_target == 0.0) {
    for (double tol : settings.tolerances) {
      report.max_ratio.push_back(max_ratio_under_tolerance(report.grid, tol));
    }
  }
  report.seeds = std::move(seeds);
  report.config = std::move(config);

  bool non_increasing = true;
  for (std::size_t i = 1; i < report.grid.size(); ++i) {
    if (report.grid[i].reward_mean > report.grid[i - 1].reward_mean) non_increasing = false;
  }
  report.notes.push_back(std::string("reward trend non-increasing: ") +
                         (non_increasing ? "yes" : "no"));
  if (settings.policy.kind == PolicyKind::kPyramid) {
    report.notes.push_back("pyramid budgets use a linear-in-depth stand-in schedule");
  }
  if (settings.policy.kind == PolicyKind::kUnstructured) {
    report.notes.push_back("unstructured masks patch attention only; no memory is freed");
  }
  return report;
}

std::size_t worker_count() {
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KVCOMPOSE_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) workers = std::min(workers, static_cast<std::size_t>(cap));
  }
  return workers;
}

}  // namespace kvc
