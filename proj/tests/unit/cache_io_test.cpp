// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "kvcompose/cache_io.hpp"
#include "kvcompose/errors.hpp"
#include "oracles.hpp"

namespace kvc {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("kvcompose_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

CompressedCache random_cache(SeededRng& rng, std::size_t layers, std::size_t heads,
                             std::size_t dim, std::size_t max_rows) {
  CompressedCache cc;
  cc.cache.layers.resize(layers);
  cc.provenance.slots.resize(layers);
  std::size_t next = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t rows = rng.below(max_rows + 1);
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix k(rows, dim);
      Matrix v(rows, dim);
      for (double& x : k.data()) x = rng.normal();
      for (double& x : v.data()) x = rng.normal();
      cc.cache.layers[l].keys.push_back(k);
      cc.cache.layers[l].values.push_back(v);
      std::vector<std::size_t> slots;
      for (std::size_t s = 0; s < rows; ++s) {
        slots.push_back(rng.below(200));
        next = std::max(next, slots.back() + 1);
      }
      cc.provenance.slots[l].push_back(slots);
    }
  }
  cc.cache.next_position = next;
  cc.source_tokens = next;
  return cc;
}

void expect_equal_at_f32(const CompressedCache& a, const CompressedCache& b) {
  ASSERT_EQ(a.cache.layers.size(), b.cache.layers.size());
  for (std::size_t l = 0; l < a.cache.layers.size(); ++l) {
    const auto& x = a.cache.layers[l];
    const auto& y = b.cache.layers[l];
    ASSERT_EQ(x.keys.size(), y.keys.size());
    for (std::size_t h = 0; h < x.keys.size(); ++h) {
      ASSERT_EQ(x.keys[h].rows(), y.keys[h].rows());
      ASSERT_EQ(x.keys[h].cols(), y.keys[h].cols());
      for (std::size_t i = 0; i < x.keys[h].data().size(); ++i) {
        EXPECT_EQ(to_f32(x.keys[h].data()[i]), y.keys[h].data()[i]);
        EXPECT_EQ(to_f32(x.values[h].data()[i]), y.values[h].data()[i]);
      }
    }
  }
  EXPECT_EQ(a.provenance.slots, b.provenance.slots);
  EXPECT_EQ(a.cache.next_position, b.cache.next_position);
}

TEST(Kvcf, SizeArithmetic) {
  const std::vector<std::size_t> rows = {2};
  // Header 4 + 2 + 12 + 4, payload 64, provenance 8, checksum 4.
  EXPECT_EQ(kvcf_file_size(1, 4, rows), 22u + 64u + 8u + 4u);
  SeededRng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cc = random_cache(rng, 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(6), 9);
    const auto bytes = encode_cache(cc);
    const std::size_t heads = cc.cache.layers[0].keys.size();
    const std::size_t dim = cc.cache.layers[0].keys[0].cols();
    EXPECT_EQ(bytes.size(), kvcf_file_size(heads, dim, cc.cache.rows_per_layer()));
  }
}

TEST(Kvcf, RoundTripAndByteIdenticalRewrite) {
  const auto dir = temp_dir("roundtrip");
  SeededRng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cc = random_cache(rng, 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(6), 9);
    const auto path = dir / "c.kvcf";
    const std::size_t written = write_cache(cc, path);
    EXPECT_EQ(written, fs::file_size(path));
    const auto back = read_cache(path);
    expect_equal_at_f32(cc, back);
    const auto first = read_file(path);
    write_cache(back, path);
    EXPECT_EQ(read_file(path), first);
  }
}

TEST(Kvcf, EmptyLayerIsValid) {
  SeededRng rng(3);
  CompressedCache cc = random_cache(rng, 2, 2, 3, 4);
  for (auto* part : {&cc.cache.layers[1].keys, &cc.cache.layers[1].values}) {
    for (auto& m : *part) m = Matrix(0, 3);
  }
  cc.provenance.slots[1] = {{}, {}};
  const auto bytes = encode_cache(cc);
  const auto back = decode_cache(bytes);
  EXPECT_EQ(back.cache.layers[1].rows(), 0u);
  EXPECT_EQ(back.cache.layers[1].keys.size(), 2u);
}

TEST(Kvcf, GoldenFixture) {
  const auto cc = read_cache(fs::path(KVCOMPOSE_FIXTURE_DIR) / "golden.kvcf");
  ASSERT_EQ(cc.cache.layers.size(), 2u);
  EXPECT_EQ(cc.cache.rows_per_layer(), (std::vector<std::size_t>{2, 1}));
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t s = 0; s < cc.cache.layers[l].rows(); ++s) {
        for (std::size_t d = 0; d < 3; ++d) {
          const double want = l + h / 2.0 + s / 4.0 + d / 8.0;
          EXPECT_EQ(cc.cache.layers[l].keys[h](s, d), want);
          EXPECT_EQ(cc.cache.layers[l].values[h](s, d), -want);
        }
        EXPECT_EQ(cc.provenance.slots[l][h][s], 10 * l + 3 * h + s);
      }
    }
  }
  EXPECT_EQ(encode_cache(cc), read_file(fs::path(KVCOMPOSE_FIXTURE_DIR) / "golden.kvcf"));
}

TEST(Kvcf, ChecksumCorruption) {
  SeededRng rng(4);
  auto bytes = encode_cache(random_cache(rng, 2, 2, 3, 4));
  bytes[bytes.size() - 2] ^= 0x01;
  try {
    decode_cache(bytes);
    FAIL() << "expected a checksum error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::kChecksumMismatch);
  }
  // Payload corruption is also a checksum error.
  bytes[bytes.size() - 2] ^= 0x01;
  bytes[40] ^= 0x80;
  try {
    decode_cache(bytes);
    FAIL() << "expected a checksum error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::kChecksumMismatch);
  }
}

TEST(Kvcf, TruncationReportsLengths) {
  SeededRng rng(5);
  CompressedCache cc = random_cache(rng, 2, 2, 3, 4);
  for (auto* part : {&cc.cache.layers[0].keys, &cc.cache.layers[0].values}) {
    for (auto& m : *part) m = Matrix(3, 3, 0.5);
  }
  cc.provenance.slots[0] = {{0, 1, 2}, {2, 1, 0}};
  auto bytes = encode_cache(cc);
  const std::size_t full = bytes.size();
  bytes.resize(full - 10);
  try {
    decode_cache(bytes);
    FAIL() << "expected a truncation error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::kTruncated);
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(full)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(full - 10)), std::string::npos) << msg;
  }
  bytes.resize(full + 3, 0);
  try {
    decode_cache(bytes);
    FAIL() << "expected a trailing-bytes error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::kTrailingBytes);
  }
}

TEST(Kvcf, HeaderErrorsAreTyped) {
  SeededRng rng(6);
  const auto good = encode_cache(random_cache(rng, 2, 2, 3, 4));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  auto bad_version = good;
  bad_version[4] = 2;
  auto check = [](const std::vector<std::uint8_t>& b, FormatErrorKind kind) {
    try {
      decode_cache(b);
      ADD_FAILURE() << "no error";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };
  check(bad_magic, FormatErrorKind::kBadMagic);
  check(bad_version, FormatErrorKind::kUnsupportedVersion);
  check({}, FormatErrorKind::kTruncated);
  check(std::vector<std::uint8_t>(good.begin(), good.begin() + 9), FormatErrorKind::kTruncated);
  auto zero_layers = good;
  zero_layers[6] = zero_layers[7] = zero_layers[8] = zero_layers[9] = 0;
  check(zero_layers, FormatErrorKind::kBadShape);
}

TEST(Kvcf, EverySingleByteHeaderCorruptionIsRejected) {
  SeededRng rng(7);
  const auto good = encode_cache(random_cache(rng, 3, 2, 4, 6));
  const std::size_t header = 4 + 2 + 12 + 4 * 3;
  for (std::size_t pos = 0; pos < header; ++pos) {
    for (int bit = 0; bit < 8; ++bit) {
      auto bytes = good;
      bytes[pos] ^= static_cast<std::uint8_t>(1u << bit);
      EXPECT_THROW(decode_cache(bytes), FormatError) << "byte " << pos << " bit " << bit;
    }
  }
}

TEST(Kvcf, MissingFileIsIoError) {
  try {
    read_cache("/nonexistent/dir/cache.kvcf");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.path(), "/nonexistent/dir/cache.kvcf");
  }
  SeededRng rng(8);
  EXPECT_THROW(write_cache(random_cache(rng, 1, 1, 1, 1), "/nonexistent/dir/out.kvcf"), IoError);
}

TEST(Bundle, RoundTripAndCorruption) {
  std::vector<NamedTensor> tensors(2);
  tensors[0].name = "scores";
  tensors[0].dims = {2, 3};
  tensors[0].f32 = {0.5, 1.25, -2.0, 3.0, 0.0, 8.0};
  tensors[1].name = "idx";
  tensors[1].dtype = DType::kU32;
  tensors[1].dims = {4};
  tensors[1].u32 = {3, 1, 0, 2};
  auto bytes = encode_bundle(tensors);
  EXPECT_EQ(decode_bundle(bytes), tensors);
  bytes[12] ^= 0x10;
  EXPECT_THROW(decode_bundle(bytes), FormatError);
  tensors[0].f32.pop_back();
  EXPECT_THROW(encode_bundle(tensors), ShapeError);
}

TEST(Bundle, ModelRoundTripAtF32) {
  ModelConfig c;
  c.layers = 2;
  c.seed = 42;
  c.rotary_dims = 4;
  const Model m = init_model(c);
  const Model back = model_from_bundle(decode_bundle(encode_bundle(model_to_bundle(m))));
  EXPECT_EQ(back.config, m.config);
  for (std::size_t i = 0; i < m.embedding.data().size(); ++i) {
    EXPECT_EQ(back.embedding.data()[i], to_f32(m.embedding.data()[i]));
  }
  EXPECT_EQ(back.layers[1].wo[3].rows(), m.layers[1].wo[3].rows());
  EXPECT_EQ(back.layers[1].mlp_out.cols(), m.layers[1].mlp_out.cols());
  const std::vector<Token> ctx = {1, 2, 3};
  const auto a = prefill(m, ctx).logits;
  const auto b = prefill(back, ctx).logits;
  EXPECT_LE(oracle::max_abs_diff(a.data(), b.data()), 1e-3);
}

EvalReport sample_report() {
  EvalReport r;
  r.policy = "kvcompose";
  for (double x : {0.0, 0.1, 0.25}) {
    r.grid.push_back({x, x + 0.003125, 1.0 - x / 3.0, 0.1 * x, x / 3.0, x * x / 7.0});
  }
  r.auc = 0.9583333333333334;
  r.max_ratio = {{0.1, 0.25, 0.25}, {0.2, 0.25, 0.25}};
  r.seeds = {1, 18446744073709551615ull};
  r.config = {{"model", {{"kind", "induction"}}}, {"grid", {0.0, 0.1, 0.25}}};
  r.notes = {"a note"};
  return r;
}

TEST(Report, JsonRoundTripIsLossless) {
  const auto r = sample_report();
  EXPECT_EQ(report_from_json(report_to_json(r)), r);
  const auto dir = temp_dir("report_json");
  const auto paths = write_report(r, dir);
  EXPECT_EQ(read_report(paths.json), r);
}

TEST(Report, CsvShapeAndDeterminism) {
  const auto r = sample_report();
  const auto dir_a = temp_dir("report_a");
  const auto dir_b = temp_dir("report_b");
  const auto a = write_report(r, dir_a);
  const auto b = write_report(r, dir_b);
  EXPECT_EQ(read_file(a.json), read_file(b.json));
  EXPECT_EQ(read_file(a.csv), read_file(b.csv));
  const std::string csv = curve_csv(r.grid);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "r_target,r_achieved,reward_mean,reward_std,epsilon,kl_mean");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EvalReport single = r;
  single.grid.resize(1);
  const std::string one = curve_csv(single.grid);
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 2);
  EXPECT_EQ(one.substr(one.find('\n') + 1), "0,0.003125,1,0,0,0\n");
}

TEST(Report, ShortestRoundTripNumbers) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(format_number(1.0 / 3.0), "0.3333333333333333");
  SeededRng rng(9);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.normal();
    EXPECT_EQ(std::stod(format_number(x)), x);
  }
}

}  // namespace
}  // namespace kvc
