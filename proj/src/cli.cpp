// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/cli.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "kvcompose/cache_io.hpp"
#include "kvcompose/composer.hpp"
#include "kvcompose/errors.hpp"
#include "kvcompose/evaluator.hpp"
#include "kvcompose/pipeline.hpp"
#include "kvcompose/run_config.hpp"
#include "kvcompose/scoring.hpp"

namespace kvc {

namespace {

int guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

RunConfig load_config(const CommandOptions& options) {
  if (options.config.empty()) throw ConfigError("--config is required");
  RunConfig config = RunConfig::load(options.config);
  if (options.seed_override) config.override_seed(*options.seed_override);
  if (options.grid) config.grid = parse_grid(*options.grid);
  if (!options.out.empty()) config.output_dir = options.out;
  return config;
}

std::vector<std::uint64_t> run_seeds(const RunConfig& config) {
  std::vector<std::uint64_t> seeds = {config.tasks.seed};
  if (config.model.kind == ModelKind::kRandom) seeds.push_back(config.model.config.seed);
  if (config.policy.kind == PolicyKind::kRandom) seeds.push_back(config.policy.seed);
  return seeds;
}

std::string shape_string(std::span<const std::uint32_t> dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s + "]";
}

void print_report_summary(const EvalReport& report, const std::string& prefix, std::ostream& out) {
  out << prefix << "auc=" << format_number(report.auc) << "\n";
  for (const auto& t : report.max_ratio) {
    out << prefix << "max_ratio eps0=" << format_number(t.tolerance)
        << " grid=" << format_number(t.grid_ratio)
        << " interpolated=" << format_number(t.interpolated_ratio) << "\n";
  }
}

EvalReport run_sweep(const Model& model, const std::vector<TaskInstance>& tasks,
                     const RunConfig& config) {
  const SweepSettings settings = config.sweep_settings();
  auto curve = sweep(model, tasks, settings);
  return make_report(settings, std::move(curve), run_seeds(config), config.report_json());
}

CompressedCache identity_cache(const KVCache& full) {
  CompressedCache cc;
  cc.cache = full;
  const std::size_t n = full.layers.empty() ? 0 : full.layers.front().rows();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::size_t heads = full.layers.empty() ? 0 : full.layers.front().keys.size();
  cc.provenance = TokenSelection::shared(
      std::vector<std::vector<std::size_t>>(full.layers.size(), all), heads);
  cc.source_tokens = n;
  return cc;
}

NamedTensor mask_tensor(const KeyMask& mask) {
  NamedTensor t;
  t.name = "keep_mask";
  t.dtype = DType::kU32;
  t.dims = {static_cast<std::uint32_t>(mask.layers), static_cast<std::uint32_t>(mask.kv_heads),
            static_cast<std::uint32_t>(mask.tokens)};
  t.u32.assign(mask.keep.begin(), mask.keep.end());
  return t;
}

NamedTensor score_tensor(std::string name, const ScoreTensor& s) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint32_t>(s.layers), static_cast<std::uint32_t>(s.heads),
            static_cast<std::uint32_t>(s.tokens)};
  t.f32 = s.values;
  return t;
}

std::string csv_quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

std::string ablation_slug(std::size_t index, const std::string& label) {
  std::string slug = (index < 10 ? "0" : "") + std::to_string(index) + "_";
  bool dash = false;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      slug += c;
      dash = false;
    } else if (!dash) {
      slug += '-';
      dash = true;
    }
  }
  while (!slug.empty() && slug.back() == '-') slug.pop_back();
  return slug;
}

int cmd_compress(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(options);
    if (options.context.empty()) throw ConfigError("--context is required");
    const Model model = build_model(config.model);
    const auto context = read_context(options.context, model.config.vocab);
    if (context.size() > model.config.max_context) {
      throw ConfigError("context longer than the model's max_context");
    }
    const auto result = compress(model, context, config.task_set(context), config.aggregation,
                                 config.r_target, config.policy);
    std::filesystem::path path = options.out.empty() ? config.output_dir / "cache.kvcf" : options.out;
    if (path.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(path.parent_path(), ec);
      if (ec) throw IoError(path.parent_path().string(), ec.message());
    }
    std::size_t bytes = 0;
    if (result.masks) {
      bytes = write_cache(identity_cache(result.compressed.cache), path);
      auto mask_path = path;
      mask_path += ".mask";
      const std::vector<NamedTensor> tensors = {mask_tensor(result.masks->mask)};
      write_bundle(tensors, mask_path);
      out << "mask=" << mask_path.string() << "\n";
    } else {
      bytes = write_cache(result.compressed, path);
    }
    out << result.summary << "\n";
    out << "file=" << path.string() << " bytes=" << bytes << "\n";
  });
}

int cmd_sweep(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(options);
    const Model model = build_model(config.model);
    const auto tasks = build_tasks(model, config);
    const EvalReport report = run_sweep(model, tasks, config);
    for (const auto& note : report.notes) err << "note: " << note << "\n";
    const auto paths = write_report(report, config.output_dir);
    print_report_summary(report, "", out);
    out << "report=" << paths.json.string() << " csv=" << paths.csv.string() << "\n";
  });
}

int cmd_ablate(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig base = load_config(options);
    const Model model = build_model(base.model);
    const auto tasks = build_tasks(model, base);
    std::string combined = "label,r_target,r_achieved,reward_mean,reward_std,epsilon,kl_mean\n";
    const auto grid = ablation_grid();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      RunConfig config = base;
      config.aggregation = grid[i];
      const std::string label = grid[i].label();
      const EvalReport report = run_sweep(model, tasks, config);
      write_report(report, base.output_dir / ablation_slug(i, label));
      for (const auto& p : report.grid) {
        combined += csv_quote(label) + "," + format_number(p.r_target) + "," +
                    format_number(p.r_achieved) + "," + format_number(p.reward_mean) + "," +
                    format_number(p.reward_std) + "," + format_number(p.epsilon) + "," +
                    format_number(p.kl_mean) + "\n";
      }
      out << "config=" << csv_quote(label) << " auc=" << format_number(report.auc) << "\n";
    }
    write_text(base.output_dir / "ablation.csv", combined);
    out << "configurations=" << grid.size() << " csv=" << (base.output_dir / "ablation.csv").string()
        << "\n";
  });
}

int cmd_dump_scores(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(options);
    const Model model = build_model(config.model);
    std::vector<Token> context;
    if (!options.context.empty()) {
      context = read_context(options.context, model.config.vocab);
    } else {
      RunConfig one = config;
      one.tasks.count = 1;
      context = build_tasks(model, one).front().context;
    }
    const auto cap = collect_attention(model, context, config.task_set(context));
    const auto& a = config.aggregation;
    const auto s_task = aggregate_task(cap, a.task, a.norm);
    const auto s_group = aggregate_group(s_task, cap.kv_heads, a.group);
    const auto s = augment_mean(s_group, a.mean_augment);
    const auto ci = composite_indices(s);
    const auto importance = layer_importance(ci, a.head);

    NamedTensor idx;
    idx.name = "idx";
    idx.dtype = DType::kU32;
    idx.dims = {static_cast<std::uint32_t>(s.layers), static_cast<std::uint32_t>(s.heads),
                static_cast<std::uint32_t>(s.tokens)};
    for (std::size_t i : ci.order) idx.u32.push_back(static_cast<std::uint32_t>(i));
    NamedTensor imp;
    imp.name = "I";
    imp.dims = {static_cast<std::uint32_t>(importance.layers),
                static_cast<std::uint32_t>(importance.tokens)};
    imp.f32 = importance.values;

    std::error_code ec;
    std::filesystem::create_directories(config.output_dir, ec);
    if (ec) throw IoError(config.output_dir.string(), ec.message());
    const std::vector<NamedTensor> tensors = {score_tensor("S_agg_task", s_task),
                                              score_tensor("S_agg_group", s_group),
                                              score_tensor("S", s), idx, imp};
    for (const auto& t : tensors) {
      const auto path = config.output_dir / (t.name + ".kvct");
      write_bundle(std::span(&t, 1), path);
      out << "tensor=" << t.name << " shape=" << shape_string(t.dims) << " file=" << path.string()
          << "\n";
    }
  });
}

int cmd_gen_model(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(options);
    const Model model = build_model(config.model);
    const std::filesystem::path path =
        options.out.empty() ? config.output_dir / "model.kvct" : options.out;
    if (path.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(path.parent_path(), ec);
      if (ec) throw IoError(path.parent_path().string(), ec.message());
    }
    const auto bytes = write_bundle(model_to_bundle(model), path);
    const auto& c = model.config;
    out << "layers=" << c.layers << " q_heads=" << c.q_heads << " kv_heads=" << c.kv_heads
        << " d_model=" << c.d_model << " head_dim=" << c.head_dim << " vocab=" << c.vocab << "\n";
    out << "file=" << path.string() << " bytes=" << bytes << "\n";
  });
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"KV cache compression by composite tokens"};
  app.require_subcommand(1);
  CommandOptions options;
  std::uint64_t seed = 0;
  std::string grid;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", options.config, "Run configuration (JSON)")->required();
    sub->add_option("--out", options.out, "Output path or directory");
    sub->add_option("--seed-override", seed, "Replace the task and model seeds");
    sub->add_option("--grid", grid, "Comma-separated compression ratios");
  };
  auto* compress_cmd = app.add_subcommand("compress", "Compress one context into a KVCF file");
  add_common(compress_cmd);
  compress_cmd->add_option("--context", options.context, "Whitespace-separated token ids")
      ->required();
  auto* sweep_cmd = app.add_subcommand("sweep", "Accuracy versus compression sweep");
  add_common(sweep_cmd);
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep every aggregation configuration");
  add_common(ablate_cmd);
  auto* dump_cmd = app.add_subcommand("dump-scores", "Write intermediate score tensors");
  add_common(dump_cmd);
  dump_cmd->add_option("--context", options.context, "Whitespace-separated token ids");
  auto* gen_cmd = app.add_subcommand("gen-model", "Write model weights as a tensor bundle");
  add_common(gen_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed-override") > 0) options.seed_override = seed;
    if (sub->count("--grid") > 0) options.grid = grid;
  }
  if (compress_cmd->parsed()) return cmd_compress(options, out, err);
  if (sweep_cmd->parsed()) return cmd_sweep(options, out, err);
  if (ablate_cmd->parsed()) return cmd_ablate(options, out, err);
  if (dump_cmd->parsed()) return cmd_dump_scores(options, out, err);
  return cmd_gen_model(options, out, err);
}

}  // namespace kvc
