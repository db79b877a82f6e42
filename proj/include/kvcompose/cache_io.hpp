// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvcompose/composer.hpp"
#include "kvcompose/evaluator.hpp"
#include "kvcompose/model.hpp"

namespace kvc {

// KVCF layout, all little-endian:
//   "KVCF" | u16 version | u32 L | u32 H_kv | u32 d_h | u32 N_ℓ × L
//   per layer: K then V as f32 [H_kv × N_ℓ × d_h]
//   per layer/head/slot: u32 original token index
//   u32 CRC-32 of every preceding byte
inline constexpr std::uint16_t kKvcfVersion = 1;

std::vector<std::uint8_t> encode_cache(const CompressedCache& cache);
/// Throws FormatError; the decoded cache's next_position is 1 + max provenance index.
CompressedCache decode_cache(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written. Throws IoError.
std::size_t write_cache(const CompressedCache& cache, const std::filesystem::path& path);
CompressedCache read_cache(const std::filesystem::path& path);

/// Size in bytes of a KVCF file with the given shape.
std::uint64_t kvcf_file_size(std::size_t head_count, std::size_t head_dim,
                             std::span<const std::size_t> rows_per_layer);

// KVCT tensor bundle, little-endian:
//   "KVCT" | u16 version | u32 count
//   per tensor: u16 name length | name | u8 dtype (0 = f32, 1 = u32) | u8 rank | u32 dims[rank] | data
//   u32 CRC-32 of every preceding byte
enum class DType : std::uint8_t { kF32 = 0, kU32 = 1 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<double> f32;         // used when dtype == kF32
  std::vector<std::uint32_t> u32;  // used when dtype == kU32

  std::size_t element_count() const;
  bool operator==(const NamedTensor&) const = default;
};

std::vector<std::uint8_t> encode_bundle(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_bundle(std::span<const std::uint8_t> bytes);
std::size_t write_bundle(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> read_bundle(const std::filesystem::path& path);

/// Model weights as a bundle; the config travels in a u32/f32 header tensor.
std::vector<NamedTensor> model_to_bundle(const Model& model);
Model model_from_bundle(std::span<const NamedTensor> tensors);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// CSV of the curve: r_target,r_achieved,reward_mean,reward_std,epsilon,kl_mean
std::string curve_csv(std::span<const CurvePoint> curve);

/// Shortest decimal that round-trips to the same double.
std::string format_number(double x);

struct ReportPaths {
  std::filesystem::path json;
  std::filesystem::path csv;
};

/// Writes report.json and curve.csv into `dir` (created if needed).
ReportPaths write_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport read_report(const std::filesystem::path& json_path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace kvc
