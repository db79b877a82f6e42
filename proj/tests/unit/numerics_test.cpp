// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "kvcompose/errors.hpp"
#include "kvcompose/numerics.hpp"
#include "oracles.hpp"

namespace kvc {
namespace {

Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix m(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
}

TEST(Matmul, SelectorRowPicksFirstEntry) {
  const Matrix out = matmul(Matrix(1, 2, {1, 0}), Matrix(2, 1, {5, 7}));
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 1u);
  EXPECT_EQ(out(0, 0), 5.0);
}

TEST(Matmul, MatchesTripleLoop) {
  SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 3, 4);
    const Matrix b = random_matrix(rng, 4, 2);
    const Matrix got = matmul(a, b);
    const Matrix want = oracle::triple_loop_matmul(a, b);
    EXPECT_LE(oracle::max_abs_diff(got.data(), want.data()), 1e-12);
  }
}

TEST(Matmul, RejectsMismatchedShapes) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(matmul_transposed(Matrix(2, 3), Matrix(2, 4)), ShapeError);
}

TEST(Matmul, TransposedMatchesExplicitTranspose) {
  SeededRng rng(12);
  const Matrix a = random_matrix(rng, 3, 5);
  const Matrix b = random_matrix(rng, 4, 5);
  Matrix bt(5, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) bt(j, i) = b(i, j);
  }
  EXPECT_LE(oracle::max_abs_diff(matmul_transposed(a, b).data(),
                                 oracle::triple_loop_matmul(a, bt).data()),
            1e-12);
}

TEST(Vecmat, MatchesSingleRowProduct) {
  SeededRng rng(13);
  const Matrix v = random_matrix(rng, 1, 4);
  const Matrix m = random_matrix(rng, 4, 3);
  EXPECT_LE(oracle::max_abs_diff(vecmat(v.row(0), m), oracle::triple_loop_matmul(v, m).data()),
            1e-12);
}

TEST(Softmax, SymmetricRowIsUniform) {
  const Matrix out = softmax_rows(Matrix(1, 2, {0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(out(0, 1), 0.5);
}

TEST(Softmax, LogTwoGivesTwoThirds) {
  const Matrix out = softmax_rows(Matrix(1, 2, {std::log(2.0), 0}), 1.0);
  EXPECT_NEAR(out(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, MatchesExpSumOracle) {
  SeededRng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_matrix(rng, 3, 5);
    const double scale = 0.25 + rng.uniform();
    const Matrix out = softmax_rows(m, scale);
    for (std::size_t r = 0; r < 3; ++r) {
      const auto row = out.row(r);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
      EXPECT_LE(oracle::max_abs_diff(row, oracle::exp_sum_softmax(m.row(r), scale)), 1e-12);
    }
  }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  const double inf = std::numeric_limits<double>::infinity();
  const Matrix out = softmax_rows(Matrix(1, 3, {1.0, -inf, 2.0}), 1.0);
  EXPECT_EQ(out(0, 1), 0.0);
  EXPECT_NEAR(out(0, 0) + out(0, 2), 1.0, 1e-15);
}

TEST(Softmax, StableForLargeInputs) {
  const Matrix out = softmax_rows(Matrix(1, 2, {1000.0, 1000.0}), 1.0);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.5);
}

TEST(Softmax, MonotoneInInputs) {
  SeededRng rng(15);
  const Matrix m = random_matrix(rng, 1, 6);
  const Matrix out = softmax_rows(m, 1.0);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      if (m(0, i) > m(0, j)) EXPECT_GT(out(0, i), out(0, j));
    }
  }
}

TEST(ArgsortDesc, DistinctValues) {
  const std::vector<double> v = {0.2, 0.9, 0.5};
  EXPECT_EQ(argsort_desc(v), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(ArgsortDesc, TiesKeepLowerIndexFirst) {
  const std::vector<double> v = {1.0, 1.0, 0.0};
  EXPECT_EQ(argsort_desc(v), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ArgsortDesc, EmptyGivesEmpty) { EXPECT_TRUE(argsort_desc({}).empty()); }

TEST(ArgsortDesc, MatchesPairSortOracle) {
  SeededRng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v;
    for (int i = 0; i < 64; ++i) v.push_back(static_cast<double>(rng.below(10)));
    const auto idx = argsort_desc(v);
    EXPECT_EQ(idx, oracle::pair_sort_desc(v));
    for (std::size_t i = 1; i < idx.size(); ++i) EXPECT_GE(v[idx[i - 1]], v[idx[i]]);
  }
}

TEST(Argmax, LowestIndexOnTies) {
  const std::vector<double> v = {1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(SeededRng, SplitMix64ReferenceValues) {
  // Published SplitMix64 outputs for seed 0.
  SeededRng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454Full);
}

TEST(SeededRng, SameSeedSameStream) {
  SeededRng a(42);
  SeededRng b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(SeededRng, RangesAndMoments) {
  SeededRng rng(7);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
  EXPECT_THROW(rng.below(0), UsageError);
}

TEST(SeededRng, ShuffleIsPermutation) {
  SeededRng rng(8);
  std::vector<int> v(30);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 30; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 9), derive_seed(5, 9));
}

TEST(MatrixType, AppendRowChecksWidth) {
  Matrix m(0, 3);
  const std::vector<double> row = {1, 2, 3};
  m.append_row(row);
  EXPECT_EQ(m.rows(), 1u);
  const std::vector<double> bad = {1, 2};
  EXPECT_THROW(m.append_row(bad), ShapeError);
}

}  // namespace
}  // namespace kvc
