// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "kvcompose/cache_io.hpp"
#include "kvcompose/errors.hpp"

namespace kvc {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void reject_unknown(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::size_t get_size(const json& j, const std::string& where, const char* key, std::size_t dflt) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::uint64_t get_u64(const json& j, const std::string& where, const char* key,
                      std::uint64_t dflt) {
  return get_size(j, where, key, dflt);
}

double get_double(const json& j, const std::string& where, const char* key, double dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

bool get_bool(const json& j, const std::string& where, const char* key, bool dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
  return j.at(key).get<bool>();
}

std::string get_string(const json& j, const std::string& where, const char* key,
                       const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

std::vector<double> get_list(const json& j, const char* key, std::vector<double> dflt) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_array() || v.empty()) throw ConfigError(std::string(key) + ": expected a non-empty list");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(std::string(key) + ": expected numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

Agg parse_agg(const std::string& s, const std::string& where) {
  if (s == "max") return Agg::kMax;
  if (s == "avg") return Agg::kAvg;
  throw ConfigError(where + ": unknown aggregation '" + s + "' (max or avg)");
}

NormVariant parse_norm(const std::string& s) {
  if (s == "none") return NormVariant::kNone;
  if (s == "v-norm") return NormVariant::kValueNorm;
  if (s == "vo-norm") return NormVariant::kProjectedNorm;
  throw ConfigError("aggregation.norm: unknown variant '" + s + "' (none, v-norm, vo-norm)");
}

const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kRandom: return "random";
    case ModelKind::kInduction: return "induction";
    case ModelKind::kFile: return "file";
  }
  return "?";
}

ModelSpec parse_model(const json& j) {
  require_object(j, "model");
  ModelSpec spec;
  const std::string kind = get_string(j, "model", "kind", "random");
  if (kind == "random") {
    reject_unknown(j, "model", {"kind", "layers", "q_heads", "kv_heads", "d_model", "head_dim",
                                "vocab", "seed", "max_context", "rotary_dims", "rope_base",
                                "rms_norm", "mlp_hidden"});
    auto& c = spec.config;
    c.layers = get_size(j, "model", "layers", c.layers);
    c.q_heads = get_size(j, "model", "q_heads", c.q_heads);
    c.kv_heads = get_size(j, "model", "kv_heads", c.kv_heads);
    c.d_model = get_size(j, "model", "d_model", c.d_model);
    c.head_dim = get_size(j, "model", "head_dim", c.head_dim);
    c.vocab = get_size(j, "model", "vocab", c.vocab);
    c.seed = get_u64(j, "model", "seed", c.seed);
    c.max_context = get_size(j, "model", "max_context", c.max_context);
    c.rotary_dims = get_size(j, "model", "rotary_dims", c.rotary_dims);
    c.rope_base = get_double(j, "model", "rope_base", c.rope_base);
    c.rms_norm = get_bool(j, "model", "rms_norm", c.rms_norm);
    c.mlp_hidden = get_size(j, "model", "mlp_hidden", c.mlp_hidden);
    c.validate();
  } else if (kind == "induction") {
    reject_unknown(j, "model", {"kind", "num_pairs", "vocab"});
    spec.kind = ModelKind::kInduction;
    spec.num_pairs = get_size(j, "model", "num_pairs", spec.num_pairs);
    spec.vocab = get_size(j, "model", "vocab", spec.vocab);
    if (spec.vocab < 4 || spec.vocab % 2 != 0) throw ConfigError("model.vocab: must be even and ≥ 4");
    if (spec.num_pairs == 0 || spec.num_pairs > spec.vocab / 2) {
      throw ConfigError("model.num_pairs: must be in [1, vocab/2]");
    }
  } else if (kind == "file") {
    reject_unknown(j, "model", {"kind", "path"});
    spec.kind = ModelKind::kFile;
    spec.path = get_string(j, "model", "path", "");
    if (spec.path.empty()) throw ConfigError("model.path: required for kind 'file'");
  } else {
    throw ConfigError("model.kind: unknown kind '" + kind + "' (random, induction, file)");
  }
  return spec;
}

TaskSpec parse_tasks(const json& j) {
  require_object(j, "tasks");
  reject_unknown(j, "tasks", {"kind", "count", "seed", "context_length", "steps", "num_pairs"});
  TaskSpec spec;
  const std::string kind = get_string(j, "tasks", "kind", "agreement");
  if (kind == "recall") {
    spec.kind = TaskKind::kRecall;
  } else if (kind != "agreement") {
    throw ConfigError("tasks.kind: unknown kind '" + kind + "' (recall, agreement)");
  }
  spec.count = get_size(j, "tasks", "count", spec.count);
  spec.seed = get_u64(j, "tasks", "seed", spec.seed);
  spec.context_length = get_size(j, "tasks", "context_length", spec.context_length);
  spec.steps = get_size(j, "tasks", "steps", spec.steps);
  spec.num_pairs = get_size(j, "tasks", "num_pairs", spec.num_pairs);
  if (spec.count == 0) throw ConfigError("tasks.count: must be positive");
  if (spec.kind == TaskKind::kAgreement && (spec.context_length == 0 || spec.steps == 0)) {
    throw ConfigError("tasks: context_length and steps must be positive");
  }
  return spec;
}

Policy parse_policy_block(const json& j) {
  Policy policy;
  if (j.is_string()) {
    policy.kind = parse_policy(j.get<std::string>());
    return policy;
  }
  require_object(j, "policy");
  reject_unknown(j, "policy", {"kind", "sinks", "window", "pyramid_shape", "seed"});
  policy.kind = parse_policy(get_string(j, "policy", "kind", "kvcompose"));
  policy.params.sinks = get_size(j, "policy", "sinks", policy.params.sinks);
  policy.params.window = get_size(j, "policy", "window", policy.params.window);
  policy.params.pyramid_shape = get_double(j, "policy", "pyramid_shape", policy.params.pyramid_shape);
  policy.seed = get_u64(j, "policy", "seed", policy.seed);
  if (policy.params.window == 0) throw ConfigError("policy.window: must be positive");
  return policy;
}

AggregationChoice parse_aggregation(const json& j) {
  require_object(j, "aggregation");
  reject_unknown(j, "aggregation", {"task", "group", "head", "mean", "norm"});
  AggregationChoice a;
  a.task = parse_agg(get_string(j, "aggregation", "task", "max"), "aggregation.task");
  a.group = parse_agg(get_string(j, "aggregation", "group", "avg"), "aggregation.group");
  a.head = parse_agg(get_string(j, "aggregation", "head", "avg"), "aggregation.head");
  a.mean_augment = get_bool(j, "aggregation", "mean", true);
  a.norm = parse_norm(get_string(j, "aggregation", "norm", "none"));
  return a;
}

void check_ratios(const std::vector<double>& values, const char* what) {
  for (double r : values) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(std::string(what) + ": values must lie in [0, 1]");
  }
}

const char* norm_name(NormVariant n) { return to_string(n); }

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  require_object(j, "config");
  reject_unknown(j, "config", {"model", "tasks", "policy", "aggregation", "task_set", "grid",
                               "tolerances", "r_target", "output_dir"});
  RunConfig c;
  try {
    if (j.contains("model")) c.model = parse_model(j.at("model"));
    if (j.contains("tasks")) c.tasks = parse_tasks(j.at("tasks"));
    if (j.contains("policy")) c.policy = parse_policy_block(j.at("policy"));
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(j.at("aggregation"));
    if (j.contains("task_set")) {
      const auto& t = j.at("task_set");
      require_object(t, "task_set");
      reject_unknown(t, "task_set", {"mode", "window"});
      const std::string mode = get_string(t, "task_set", "mode", "agnostic");
      if (mode == "aware") {
        c.task_mode = TaskMode::kTaskAware;
      } else if (mode != "agnostic") {
        throw ConfigError("task_set.mode: unknown mode '" + mode + "' (aware, agnostic)");
      }
      c.observation_window = get_size(t, "task_set", "window", c.observation_window);
      if (c.observation_window == 0) throw ConfigError("task_set.window: must be positive");
    }
    c.grid = get_list(j, "grid", c.grid);
    c.tolerances = get_list(j, "tolerances", c.tolerances);
    c.r_target = get_double(j, "config", "r_target", c.r_target);
    c.output_dir = get_string(j, "config", "output_dir", c.output_dir.string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_ratios(c.grid, "grid");
  check_ratios({c.r_target}, "r_target");
  if (!std::is_sorted(c.grid.begin(), c.grid.end()) ||
      std::adjacent_find(c.grid.begin(), c.grid.end()) != c.grid.end()) {
    throw ConfigError("grid: must be strictly increasing");
  }
  for (double t : c.tolerances) {
    if (!(t >= 0.0)) throw ConfigError("tolerances: must be non-negative");
  }
  if (c.tasks.kind == TaskKind::kRecall && c.model.kind == ModelKind::kInduction &&
      c.tasks.num_pairs > c.model.vocab / 2) {
    throw ConfigError("tasks.num_pairs: exceeds the key vocabulary");
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j = report_json();
  j["output_dir"] = output_dir.string();
  return j;
}

json RunConfig::report_json() const {
  json j;
  json& m = j["model"];
  m["kind"] = model_kind_name(model.kind);
  switch (model.kind) {
    case ModelKind::kRandom: {
      const auto& c = model.config;
      m["layers"] = c.layers;
      m["q_heads"] = c.q_heads;
      m["kv_heads"] = c.kv_heads;
      m["d_model"] = c.d_model;
      m["head_dim"] = c.head_dim;
      m["vocab"] = c.vocab;
      m["seed"] = c.seed;
      m["max_context"] = c.max_context;
      m["rotary_dims"] = c.rotary_dims;
      m["rope_base"] = c.rope_base;
      m["rms_norm"] = c.rms_norm;
      m["mlp_hidden"] = c.mlp_hidden;
      break;
    }
    case ModelKind::kInduction:
      m["num_pairs"] = model.num_pairs;
      m["vocab"] = model.vocab;
      break;
    case ModelKind::kFile:
      m["path"] = model.path.string();
      break;
  }
  json& t = j["tasks"];
  t["kind"] = to_string(tasks.kind);
  t["count"] = tasks.count;
  t["seed"] = tasks.seed;
  t["context_length"] = tasks.context_length;
  t["steps"] = tasks.steps;
  t["num_pairs"] = tasks.num_pairs;
  j["policy"] = {{"kind", to_string(policy.kind)},
                 {"sinks", policy.params.sinks},
                 {"window", policy.params.window},
                 {"pyramid_shape", policy.params.pyramid_shape},
                 {"seed", policy.seed}};
  j["aggregation"] = {{"task", to_string(aggregation.task)},
                      {"group", to_string(aggregation.group)},
                      {"head", to_string(aggregation.head)},
                      {"mean", aggregation.mean_augment},
                      {"norm", norm_name(aggregation.norm)}};
  j["task_set"] = {{"mode", task_mode == TaskMode::kTaskAware ? "aware" : "agnostic"},
                   {"window", observation_window}};
  j["grid"] = grid;
  j["tolerances"] = tolerances;
  j["r_target"] = r_target;
  return j;
}

void RunConfig::override_seed(std::uint64_t seed) {
  tasks.seed = seed;
  model.config.seed = seed;
}

SweepSettings RunConfig::sweep_settings() const {
  SweepSettings s;
  s.policy = policy;
  s.aggregation = aggregation;
  s.task_mode = task_mode;
  s.observation_window = observation_window;
  s.grid = grid;
  s.tolerances = tolerances;
  return s;
}

TaskSet RunConfig::task_set(std::span<const Token> context) const {
  if (task_mode == TaskMode::kTaskAware) {
    if (context.empty()) throw ConfigError("task-aware mode needs a non-empty context");
    return TaskSet::aware({{context.back()}});
  }
  return TaskSet::agnostic(std::min(observation_window, context.size()));
}

Model build_model(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::kRandom:
      return init_model(spec.config);
    case ModelKind::kInduction:
      return construct_induction_model(spec.num_pairs, spec.vocab);
    case ModelKind::kFile:
      return model_from_bundle(read_bundle(spec.path));
  }
  throw ConfigError("unknown model kind");
}

std::vector<TaskInstance> build_tasks(const Model& model, const RunConfig& config) {
  const auto& t = config.tasks;
  if (t.kind == TaskKind::kRecall) {
    if (t.num_pairs == 0 || t.num_pairs > model.config.vocab / 2) {
      throw ConfigError("tasks.num_pairs: must be in [1, vocab/2]");
    }
    return make_recall_tasks(t.num_pairs, model.config.vocab, t.count, t.seed);
  }
  if (t.context_length + t.steps + 1 > model.config.max_context) {
    throw ConfigError("tasks: context_length + steps exceeds the model's max_context");
  }
  return make_agreement_tasks(model, t.context_length, t.steps, t.count, t.seed);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const auto* begin = item.data();
    const auto* end = item.data() + item.size();
    while (begin < end && *begin == ' ') ++begin;
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) throw ConfigError("--grid: bad value '" + item + "'");
    grid.push_back(v);
  }
  if (grid.empty()) throw ConfigError("--grid: empty");
  check_ratios(grid, "--grid");
  if (!std::is_sorted(grid.begin(), grid.end()) ||
      std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
    throw ConfigError("--grid: must be strictly increasing");
  }
  return grid;
}

std::vector<Token> read_context(const std::filesystem::path& path, std::size_t vocab) {
  const auto bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::vector<Token> tokens;
  std::string word;
  while (in >> word) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(word.data(), word.data() + word.size(), v);
    if (res.ec != std::errc() || res.ptr != word.data() + word.size()) {
      throw ConfigError(path.string() + ": bad token '" + word + "'");
    }
    if (v >= vocab) {
      throw ConfigError(path.string() + ": token " + word + " outside vocab of " +
                        std::to_string(vocab));
    }
    tokens.push_back(static_cast<Token>(v));
  }
  if (tokens.empty()) throw ConfigError(path.string() + ": no tokens");
  return tokens;
}

}  // namespace kvc
