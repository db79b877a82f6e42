// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace kvc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out;  // empty: the config's output_dir
  std::filesystem::path context;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> grid;
};

// Each command prints machine-readable lines on `out`, diagnostics on `err`,
// and returns an exit code.
int cmd_compress(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_sweep(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_ablate(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_dump_scores(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_gen_model(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Directory name used by cmd_ablate for one aggregation label.
std::string ablation_slug(std::size_t index, const std::string& label);

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace kvc
