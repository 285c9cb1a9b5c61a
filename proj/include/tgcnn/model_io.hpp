#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgcnn/error.hpp"
#include "tgcnn/features.hpp"
#include "tgcnn/model.hpp"

namespace tgcnn {

// Binary model file, all integers and floats little-endian:
//   "TGCN" u32 version
//   u64 T C w F H N, u32 branch_mode, u64 seed
//   u64 tensor_count, then per tensor:
//     u32 name_len, name, u32 rank, u64 dims[rank], f64 values[]
//   u64 checksum: wrapping sum of every value's bit pattern
// Parameters come first in visitation order; optional input normalization
// statistics follow as "input_norm.mean" / "input_norm.std".
inline constexpr std::string_view kModelMagic = "TGCN";
inline constexpr std::uint32_t kModelVersion = 1;

struct ModelBundle {
  TGCNNModel model;
  std::optional<ChannelStats> input_norm;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    checksum_ += bits;
    put(bits, 8);
  }
  void bytes(std::string_view s) { buf_.append(s); }

  const std::string& buffer() const { return buf_; }
  std::uint64_t checksum() const { return checksum_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
  std::uint64_t checksum_ = 0;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() {
    const std::uint64_t bits = get(8);
    checksum_ += bits;
    return std::bit_cast<double>(bits);
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::uint64_t checksum() const { return checksum_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ModelFileError("model file: truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::uint64_t checksum_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Upper bound on any single dimension or element count read from a file.
inline constexpr std::uint64_t kMaxFileDim = std::uint64_t{1} << 32;

inline NamedTensor read_tensor(ByteReader& r) {
  const std::uint32_t len = r.u32();
  if (len == 0 || len > 4096) throw ModelFileError("model file: bad tensor name length");
  NamedTensor nt;
  nt.name = std::string(r.bytes(len));
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw ModelFileError("model file: bad rank for " + nt.name);
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t d = r.u64();
    if (d == 0 || d > kMaxFileDim) throw ModelFileError("model file: bad dimension for " + nt.name);
    count *= d;
    if (count > kMaxFileDim || count * 8 > r.remaining()) {
      throw ModelFileError("model file: truncated tensor " + nt.name);
    }
    shape.push_back(static_cast<std::size_t>(d));
  }
  std::vector<double> v(static_cast<std::size_t>(count));
  for (double& x : v) {
    x = r.f64();
    if (!std::isfinite(x)) throw ModelFileError("model file: non-finite value in " + nt.name);
  }
  nt.value = Tensor(std::move(shape), std::move(v));
  return nt;
}

}  // namespace detail

inline std::string serialize_model(const ModelBundle& b) {
  const TGCNNConfig& c = b.model.config;
  detail::ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(kModelVersion);
  for (std::size_t v : {c.T, c.C, c.w, c.F, c.H, c.N}) w.u64(v);
  w.u32(static_cast<std::uint32_t>(c.branch_mode));
  w.u64(c.seed);

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  visit_parameters(b.model, [&](const std::string& name, const Tensor& t) {
    tensors.emplace_back(name, &t);
  });
  std::optional<Tensor> mean, sd;
  if (b.input_norm) {
    const auto& st = *b.input_norm;
    if (st.mean.size() != c.C || st.std.size() != c.C) {
      throw DimensionError("model file: normalization stats do not cover C channels");
    }
    mean = Tensor({c.C}, st.mean);
    sd = Tensor({c.C}, st.std);
    tensors.emplace_back("input_norm.mean", &*mean);
    tensors.emplace_back("input_norm.std", &*sd);
  }
  w.u64(tensors.size());
  for (const auto& [name, t] : tensors) detail::write_tensor(w, name, *t);
  const std::uint64_t sum = w.checksum();
  w.u64(sum);
  return w.buffer();
}

inline ModelBundle deserialize_model(std::string_view data) {
  detail::ByteReader r(data);
  if (r.remaining() < 4 || r.bytes(4) != kModelMagic) {
    throw ModelFileError("model file: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw ModelFileError("model file: unsupported version " + std::to_string(version));
  }
  TGCNNConfig c;
  std::uint64_t dims[6];
  for (auto& d : dims) {
    d = r.u64();
    if (d > detail::kMaxFileDim) throw ModelFileError("model file: bad config value");
  }
  c.T = dims[0], c.C = dims[1], c.w = dims[2], c.F = dims[3], c.H = dims[4], c.N = dims[5];
  const std::uint32_t mode = r.u32();
  if (mode > 2) throw ModelFileError("model file: bad branch mode " + std::to_string(mode));
  c.branch_mode = static_cast<BranchMode>(mode);
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ModelFileError(std::string("model file: ") + e.what());
  }

  const std::uint64_t count = r.u64();
  if (count > 1'000'000) throw ModelFileError("model file: bad tensor count");
  std::vector<detail::NamedTensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) tensors.push_back(detail::read_tensor(r));
  const std::uint64_t computed = r.checksum();
  const std::uint64_t stored = r.u64();
  if (stored != computed) throw ModelFileError("model file: checksum mismatch");
  if (r.remaining() != 0) throw ModelFileError("model file: trailing bytes");

  // Guard against huge allocations from a corrupt but checksum-valid header.
  if (c.H > 1u << 16 || c.T > 1u << 16 || c.C > 1u << 16 || c.F > 1u << 16 ||
      c.N > 1024 || c.w > c.T) {
    throw ModelFileError("model file: implausible config");
  }
  ModelBundle b{build(c), std::nullopt};
  std::size_t next = 0;
  visit_parameters(b.model, [&](const std::string& name, Tensor& t) {
    if (next >= tensors.size()) throw ModelFileError("model file: missing tensor " + name);
    const auto& nt = tensors[next++];
    if (nt.name != name) {
      throw ModelFileError("model file: expected tensor " + name + ", found " + nt.name);
    }
    if (nt.value.shape() != t.shape()) {
      throw ModelFileError("model file: tensor " + name + " has shape " +
                           shape_str(nt.value.shape()) + ", expected " + shape_str(t.shape()));
    }
    t = nt.value;
  });
  if (next + 2 == tensors.size() && tensors[next].name == "input_norm.mean" &&
      tensors[next + 1].name == "input_norm.std") {
    const auto& m = tensors[next].value;
    const auto& s = tensors[next + 1].value;
    if (m.shape() != Shape{c.C} || s.shape() != Shape{c.C}) {
      throw ModelFileError("model file: normalization stats have the wrong shape");
    }
    b.input_norm = ChannelStats{m.values(), s.values()};
    next += 2;
  }
  if (next != tensors.size()) {
    throw ModelFileError("model file: unexpected tensor " + tensors[next].name);
  }
  return b;
}

inline void save_model(const ModelBundle& b, const std::string& path) {
  const std::string bytes = serialize_model(b);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write model '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing model '" + path + "'");
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace tgcnn
