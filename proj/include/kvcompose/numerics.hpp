// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kvc {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  /// Appends one row; `values.size()` must equal cols().
  void append_row(std::span<const double> values);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a × b. Throws ShapeError when a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);

/// a × bᵀ. Throws ShapeError when a.cols() != b.cols().
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// Row vector × matrix.
std::vector<double> vecmat(std::span<const double> v, const Matrix& m);

/// Row-wise softmax of `scale * m`. Entries equal to -inf map to exactly zero.
Matrix softmax_rows(const Matrix& m, double scale);

/// Softmax of one vector in place (same rules as softmax_rows).
void softmax_inplace(std::span<double> v, double scale);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// Stable descending argsort: ties keep the lower index first.
std::vector<std::size_t> argsort_desc(std::span<const double> v);

/// Index of the largest entry, lowest index on ties. Empty input returns 0.
std::size_t argmax(std::span<const double> v);

/// Counter-based SplitMix64 generator.
///
/// Update rule: state += 0x9E3779B97F4A7C15, then the output is the state
/// passed through the SplitMix64 finalizer
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z = z ^ (z >> 31).
/// uniform() uses the top 53 bits; below(n) uses the high word of a 64x64
/// multiply; normal() is Box-Muller over two uniforms (cosine branch only).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal draw.
  double normal();

  /// Fisher-Yates shuffle of `v`.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace kvc
