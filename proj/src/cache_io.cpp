// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvcompose/cache_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>

#include "kvcompose/errors.hpp"

namespace kvc {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kCacheMagic[4] = {'K', 'V', 'C', 'F'};
constexpr char kBundleMagic[4] = {'K', 'V', 'C', 'T'};
constexpr std::uint16_t kBundleVersion = 1;
// Upper bound on header-declared counts, so corrupt headers cannot request huge buffers.
constexpr std::uint32_t kMaxDim = 1u << 20;

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u16(std::uint16_t v) { raw(&v, 2); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void f32(double v) {
    const float f = static_cast<float>(v);
    raw(&f, 4);
  }
  void finish() { u32(crc32_of(bytes_)); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatErrorKind::kTruncated, pos_,
                        "need " + std::to_string(n) + " bytes, " +
                            std::to_string(bytes_.size() - pos_) + " left");
    }
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint16_t v;
    raw(&v, 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  double f32() {
    float v;
    raw(&v, 4);
    return static_cast<double>(v);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& in, const char (&magic)[4]) {
  char got[4] = {};
  in.need(4);
  in.raw(got, 4);
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, 0,
                      std::string("expected ") + std::string(magic, 4));
  }
}

void check_length(std::span<const std::uint8_t> bytes, std::uint64_t expected,
                  std::size_t at) {
  if (bytes.size() < expected) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(),
                      "expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatErrorKind::kTrailingBytes, expected,
                      "expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()) + " (shape declared at byte " +
                          std::to_string(at) + ")");
  }
}

void check_crc(std::span<const std::uint8_t> bytes) {
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  const std::uint32_t actual = crc32_of(bytes.first(body));
  if (stored != actual) {
    throw FormatError(FormatErrorKind::kChecksumMismatch, body,
                      "stored " + std::to_string(stored) + ", computed " +
                          std::to_string(actual));
  }
}

std::uint32_t checked_dim(Reader& in, const char* what, std::uint32_t lo) {
  const std::size_t at = in.offset();
  const std::uint32_t v = in.u32();
  if (v < lo || v > kMaxDim) {
    throw FormatError(FormatErrorKind::kBadShape, at,
                      std::string(what) + " = " + std::to_string(v) + " out of range");
  }
  return v;
}

}  // namespace

std::uint64_t kvcf_file_size(std::size_t head_count, std::size_t head_dim,
                             std::span<const std::size_t> rows_per_layer) {
  std::uint64_t size = 4 + 2 + 4 * 3 + 4 * static_cast<std::uint64_t>(rows_per_layer.size());
  for (std::size_t rows : rows_per_layer) {
    const std::uint64_t slots = static_cast<std::uint64_t>(head_count) * rows;
    size += 2 * slots * head_dim * 4;  // K and V
    size += slots * 4;                 // provenance
  }
  return size + 4;
}

std::vector<std::uint8_t> encode_cache(const CompressedCache& cc) {
  const auto& layers = cc.cache.layers;
  if (layers.empty()) throw UsageError("encode_cache: cache has no layers");
  if (!cc.cache.is_structured()) throw InvariantError("encode_cache: cache is not structured");
  const std::size_t heads = layers.front().keys.size();
  const std::size_t head_dim = heads == 0 ? 0 : layers.front().keys.front().cols();
  if (heads == 0 || head_dim == 0) throw UsageError("encode_cache: cache has no heads");
  if (cc.provenance.layers() != layers.size()) {
    throw ShapeError("encode_cache: provenance layer count differs from cache");
  }

  Writer out;
  out.raw(kCacheMagic, 4);
  out.u16(kKvcfVersion);
  out.u32(static_cast<std::uint32_t>(layers.size()));
  out.u32(static_cast<std::uint32_t>(heads));
  out.u32(static_cast<std::uint32_t>(head_dim));
  for (const auto& layer : layers) out.u32(static_cast<std::uint32_t>(layer.rows()));
  for (const auto& layer : layers) {
    if (layer.keys.size() != heads) throw ShapeError("encode_cache: head count varies by layer");
    for (const auto* part : {&layer.keys, &layer.values}) {
      for (const Matrix& m : *part) {
        if (m.cols() != head_dim) throw ShapeError("encode_cache: head dim varies");
        for (double x : m.data()) out.f32(x);
      }
    }
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& per_head = cc.provenance.slots[l];
    if (per_head.size() != heads) throw ShapeError("encode_cache: provenance head count differs");
    for (const auto& slots : per_head) {
      if (slots.size() != layers[l].rows()) {
        throw ShapeError("encode_cache: provenance row count differs at layer " +
                         std::to_string(l));
      }
      for (std::size_t idx : slots) out.u32(static_cast<std::uint32_t>(idx));
    }
  }
  out.finish();
  return out.take();
}

CompressedCache decode_cache(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  check_magic(in, kCacheMagic);
  const std::size_t version_at = in.offset();
  const std::uint16_t version = in.u16();
  if (version != kKvcfVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, version_at,
                      "version " + std::to_string(version));
  }
  const std::uint32_t layers = checked_dim(in, "layers", 1);
  const std::uint32_t heads = checked_dim(in, "kv heads", 1);
  const std::uint32_t head_dim = checked_dim(in, "head dim", 1);
  in.need(4ull * layers);
  std::vector<std::size_t> rows(layers);
  for (auto& r : rows) r = checked_dim(in, "layer rows", 0);

  check_length(bytes, kvcf_file_size(heads, head_dim, rows), 6);
  check_crc(bytes);

  CompressedCache cc;
  cc.cache.layers.resize(layers);
  for (std::uint32_t l = 0; l < layers; ++l) {
    auto& layer = cc.cache.layers[l];
    for (auto* part : {&layer.keys, &layer.values}) {
      for (std::uint32_t h = 0; h < heads; ++h) {
        Matrix m(rows[l], head_dim);
        for (double& x : m.data()) x = in.f32();
        part->push_back(std::move(m));
      }
    }
  }
  std::size_t next = 0;
  cc.provenance.slots.resize(layers);
  for (std::uint32_t l = 0; l < layers; ++l) {
    for (std::uint32_t h = 0; h < heads; ++h) {
      std::vector<std::size_t> slots(rows[l]);
      for (auto& s : slots) {
        s = in.u32();
        next = std::max(next, s + 1);
      }
      cc.provenance.slots[l].push_back(std::move(slots));
    }
  }
  cc.cache.next_position = next;
  cc.source_tokens = next;
  return cc;
}

std::size_t write_cache(const CompressedCache& cache, const std::filesystem::path& path) {
  const auto bytes = encode_cache(cache);
  write_file(path, bytes);
  return bytes.size();
}

CompressedCache read_cache(const std::filesystem::path& path) {
  return decode_cache(read_file(path));
}

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_bundle(std::span<const NamedTensor> tensors) {
  Writer out;
  out.raw(kBundleMagic, 4);
  out.u16(kBundleVersion);
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw UsageError("encode_bundle: tensor name too long");
    }
    const std::size_t count = t.element_count();
    const std::size_t stored = t.dtype == DType::kF32 ? t.f32.size() : t.u32.size();
    if (stored != count) {
      throw ShapeError("encode_bundle: tensor '" + t.name + "' holds " + std::to_string(stored) +
                       " values for " + std::to_string(count) + " elements");
    }
    out.u16(static_cast<std::uint16_t>(t.name.size()));
    out.raw(t.name.data(), t.name.size());
    out.u8(static_cast<std::uint8_t>(t.dtype));
    out.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) out.u32(d);
    if (t.dtype == DType::kF32) {
      for (double x : t.f32) out.f32(x);
    } else {
      for (auto x : t.u32) out.u32(x);
    }
  }
  out.finish();
  return out.take();
}

std::vector<NamedTensor> decode_bundle(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  check_magic(in, kBundleMagic);
  const std::size_t version_at = in.offset();
  const std::uint16_t version = in.u16();
  if (version != kBundleVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, version_at,
                      "version " + std::to_string(version));
  }
  if (bytes.size() < 4 + 2 + 4 + 4) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(), "bundle shorter than header");
  }
  check_crc(bytes);
  const std::uint32_t count = checked_dim(in, "tensor count", 0);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(in.u16());
    in.raw(t.name.data(), t.name.size());
    const std::size_t dtype_at = in.offset();
    const std::uint8_t dtype = in.u8();
    if (dtype > 1) {
      throw FormatError(FormatErrorKind::kBadShape, dtype_at, "dtype " + std::to_string(dtype));
    }
    t.dtype = static_cast<DType>(dtype);
    const std::uint8_t rank = in.u8();
    std::uint64_t elements = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.dims.push_back(checked_dim(in, "tensor dim", 0));
      elements *= t.dims.back();
    }
    if (elements * 4 > in.size() - in.offset()) {
      throw FormatError(FormatErrorKind::kTruncated, in.offset(),
                        "tensor '" + t.name + "' needs " + std::to_string(elements * 4) + " bytes");
    }
    if (t.dtype == DType::kF32) {
      t.f32.resize(elements);
      for (auto& x : t.f32) x = in.f32();
    } else {
      t.u32.resize(elements);
      for (auto& x : t.u32) x = in.u32();
    }
    out.push_back(std::move(t));
  }
  if (in.offset() + 4 != bytes.size()) {
    throw FormatError(FormatErrorKind::kTrailingBytes, in.offset(),
                      "bundle payload ends before the checksum");
  }
  return out;
}

std::size_t write_bundle(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
  const auto bytes = encode_bundle(tensors);
  write_file(path, bytes);
  return bytes.size();
}

std::vector<NamedTensor> read_bundle(const std::filesystem::path& path) {
  return decode_bundle(read_file(path));
}

namespace {

NamedTensor matrix_tensor(std::string name, const Matrix& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = DType::kF32;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.f32.assign(m.data().begin(), m.data().end());
  return t;
}

const NamedTensor& find_tensor(std::span<const NamedTensor> tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError(FormatErrorKind::kBadShape, 0, "missing tensor '" + name + "'");
}

Matrix tensor_matrix(std::span<const NamedTensor> tensors, const std::string& name) {
  const auto& t = find_tensor(tensors, name);
  if (t.dtype != DType::kF32 || t.dims.size() != 2) {
    throw FormatError(FormatErrorKind::kBadShape, 0, "tensor '" + name + "' is not an f32 matrix");
  }
  return Matrix(t.dims[0], t.dims[1], t.f32);
}

std::string head_name(std::size_t l, const char* what, std::size_t h) {
  return "layer" + std::to_string(l) + "." + what + "." + std::to_string(h);
}

}  // namespace

std::vector<NamedTensor> model_to_bundle(const Model& model) {
  const auto& c = model.config;
  std::vector<NamedTensor> out;
  NamedTensor cfg;
  cfg.name = "config";
  cfg.dtype = DType::kU32;
  cfg.dims = {12};
  cfg.u32 = {static_cast<std::uint32_t>(c.layers),        static_cast<std::uint32_t>(c.q_heads),
             static_cast<std::uint32_t>(c.kv_heads),      static_cast<std::uint32_t>(c.d_model),
             static_cast<std::uint32_t>(c.head_dim),      static_cast<std::uint32_t>(c.vocab),
             static_cast<std::uint32_t>(c.seed),          static_cast<std::uint32_t>(c.seed >> 32),
             static_cast<std::uint32_t>(c.max_context),   static_cast<std::uint32_t>(c.rotary_dims),
             static_cast<std::uint32_t>(c.rms_norm),      static_cast<std::uint32_t>(c.mlp_hidden)};
  out.push_back(std::move(cfg));
  NamedTensor base;
  base.name = "rope_base";
  base.dims = {1};
  base.f32 = {c.rope_base};
  out.push_back(std::move(base));
  out.push_back(matrix_tensor("embedding", model.embedding));
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& w = model.layers[l];
    for (std::size_t h = 0; h < c.q_heads; ++h) out.push_back(matrix_tensor(head_name(l, "wq", h), w.wq[h]));
    for (std::size_t h = 0; h < c.kv_heads; ++h) out.push_back(matrix_tensor(head_name(l, "wk", h), w.wk[h]));
    for (std::size_t h = 0; h < c.kv_heads; ++h) out.push_back(matrix_tensor(head_name(l, "wv", h), w.wv[h]));
    for (std::size_t h = 0; h < c.q_heads; ++h) out.push_back(matrix_tensor(head_name(l, "wo", h), w.wo[h]));
    if (c.mlp_hidden > 0) {
      out.push_back(matrix_tensor(head_name(l, "mlp_in", 0), w.mlp_in));
      out.push_back(matrix_tensor(head_name(l, "mlp_out", 0), w.mlp_out));
    }
  }
  out.push_back(matrix_tensor("unembedding", model.unembedding));
  return out;
}

Model model_from_bundle(std::span<const NamedTensor> tensors) {
  const auto& cfg = find_tensor(tensors, "config");
  if (cfg.dtype != DType::kU32 || cfg.u32.size() != 12) {
    throw FormatError(FormatErrorKind::kBadShape, 0, "config tensor malformed");
  }
  Model model;
  auto& c = model.config;
  c.layers = cfg.u32[0];
  c.q_heads = cfg.u32[1];
  c.kv_heads = cfg.u32[2];
  c.d_model = cfg.u32[3];
  c.head_dim = cfg.u32[4];
  c.vocab = cfg.u32[5];
  c.seed = static_cast<std::uint64_t>(cfg.u32[6]) | (static_cast<std::uint64_t>(cfg.u32[7]) << 32);
  c.max_context = cfg.u32[8];
  c.rotary_dims = cfg.u32[9];
  c.rms_norm = cfg.u32[10] != 0;
  c.mlp_hidden = cfg.u32[11];
  c.rope_base = find_tensor(tensors, "rope_base").f32.at(0);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kBadShape, 0, e.what());
  }
  model.embedding = tensor_matrix(tensors, "embedding");
  model.layers.resize(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    auto& w = model.layers[l];
    for (std::size_t h = 0; h < c.q_heads; ++h) w.wq.push_back(tensor_matrix(tensors, head_name(l, "wq", h)));
    for (std::size_t h = 0; h < c.kv_heads; ++h) w.wk.push_back(tensor_matrix(tensors, head_name(l, "wk", h)));
    for (std::size_t h = 0; h < c.kv_heads; ++h) w.wv.push_back(tensor_matrix(tensors, head_name(l, "wv", h)));
    for (std::size_t h = 0; h < c.q_heads; ++h) w.wo.push_back(tensor_matrix(tensors, head_name(l, "wo", h)));
    if (c.mlp_hidden > 0) {
      w.mlp_in = tensor_matrix(tensors, head_name(l, "mlp_in", 0));
      w.mlp_out = tensor_matrix(tensors, head_name(l, "mlp_out", 0));
    }
  }
  model.unembedding = tensor_matrix(tensors, "unembedding");
  return model;
}

std::string format_number(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["policy"] = report.policy;
  j["auc"] = report.auc;
  j["seeds"] = report.seeds;
  j["config"] = report.config;
  j["notes"] = report.notes;
  auto& grid = j["grid"] = nlohmann::json::array();
  for (const auto& p : report.grid) {
    grid.push_back({{"r_target", p.r_target},
                    {"r_achieved", p.r_achieved},
                    {"reward_mean", p.reward_mean},
                    {"reward_std", p.reward_std},
                    {"epsilon", p.epsilon},
                    {"kl_mean", p.kl_mean}});
  }
  auto& tol = j["max_ratio"] = nlohmann::json::array();
  for (const auto& t : report.max_ratio) {
    tol.push_back({{"tolerance", t.tolerance},
                   {"grid_ratio", t.grid_ratio},
                   {"interpolated_ratio", t.interpolated_ratio}});
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.policy = j.at("policy").get<std::string>();
  report.auc = j.at("auc").get<double>();
  report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  report.config = j.at("config");
  report.notes = j.at("notes").get<std::vector<std::string>>();
  for (const auto& p : j.at("grid")) {
    report.grid.push_back({p.at("r_target").get<double>(), p.at("r_achieved").get<double>(),
                           p.at("reward_mean").get<double>(), p.at("reward_std").get<double>(),
                           p.at("epsilon").get<double>(), p.at("kl_mean").get<double>()});
  }
  for (const auto& t : j.at("max_ratio")) {
    report.max_ratio.push_back({t.at("tolerance").get<double>(), t.at("grid_ratio").get<double>(),
                                t.at("interpolated_ratio").get<double>()});
  }
  return report;
}

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "r_target,r_achieved,reward_mean,reward_std,epsilon,kl_mean\n";
  for (const auto& p : curve) {
    out += format_number(p.r_target) + "," + format_number(p.r_achieved) + "," +
           format_number(p.reward_mean) + "," + format_number(p.reward_std) + "," +
           format_number(p.epsilon) + "," + format_number(p.kl_mean) + "\n";
  }
  return out;
}

ReportPaths write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), ec.message());
  ReportPaths paths{dir / "report.json", dir / "curve.csv"};
  write_text(paths.json, report_to_json(report).dump(2) + "\n");
  write_text(paths.csv, curve_csv(report.grid));
  return paths;
}

EvalReport read_report(const std::filesystem::path& json_path) {
  const auto bytes = read_file(json_path);
  try {
    return report_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(json_path.string(), std::string("malformed report: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string(), "read failed");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace kvc
