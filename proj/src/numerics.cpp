// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <numbers>
#include <string>

#include "kvcompose/errors.hpp"

namespace kvc {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic:
      return "bad magic";
    case FormatErrorKind::kUnsupportedVersion:
      return "unsupported version";
    case FormatErrorKind::kTruncated:
      return "truncated";
    case FormatErrorKind::kTrailingBytes:
      return "trailing bytes";
    case FormatErrorKind::kBadShape:
      return "bad shape";
    case FormatErrorKind::kChecksumMismatch:
      return "checksum mismatch";
  }
  return "unknown format error";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::append_row(std::span<const double> values) {
  if (values.size() != cols_) {
    throw ShapeError("append_row: got " + std::to_string(values.size()) + " values for " +
                     std::to_string(cols_) + " columns");
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: inner dims " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

std::vector<double> vecmat(std::span<const double> v, const Matrix& m) {
  if (v.size() != m.rows()) {
    throw ShapeError("vecmat: vector of " + std::to_string(v.size()) + " by " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double vk = v[k];
    if (vk == 0.0) continue;
    const auto m_row = m.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += vk * m_row[j];
  }
  return out;
}

void softmax_inplace(std::span<double> v, double scale) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (x != -std::numeric_limits<double>::infinity()) peak = std::max(peak, scale * x);
  }
  double total = 0.0;
  for (double& x : v) {
    if (x == -std::numeric_limits<double>::infinity()) {
      x = 0.0;
    } else {
      x = std::exp(scale * x - peak);
      total += x;
    }
  }
  if (total > 0.0) {
    for (double& x : v) x /= total;
  }
}

Matrix softmax_rows(const Matrix& m, double scale) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r), scale);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<std::size_t> argsort_desc(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::uint64_t SeededRng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw UsageError("SeededRng::below: n must be positive");
  __extension__ using u128 = unsigned __int128;
  const u128 wide = static_cast<u128>(next_u64()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

double SeededRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  SeededRng rng(base ^ (stream * 0xD1B54A32D192ED03ULL));
  return rng.next_u64();
}

}  // namespace kvc
