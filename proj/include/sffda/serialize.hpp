// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <type_traits>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sffda/tensor.hpp"

// Binary containers.
//
//   SFFW (named parameters):
//     "SFFW" u16 version=1 u32 count
//     count x { u16 name_len, name bytes (UTF-8), u8 rank, rank x u32 extent,
//               f64 values }
//   SFFT (single tensor, e.g. frame clips and feature caches):
//     "SFFT" u16 version=1 u8 rank, rank x u32 extent, f32 values
//
// All integers and floats are little-endian; values are row-major.
namespace sffda::io {

inline constexpr std::uint16_t kWeightsVersion = 1;
inline constexpr std::uint16_t kTensorVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu));
    }
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(std::vector<unsigned char> data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError(source_ + ": truncated file");
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool done() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::vector<unsigned char> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

inline void put_shape(Writer& w, const Shape& shape) {
  if (shape.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw FormatError("rank too large to serialize: " + std::to_string(shape.size()));
  }
  w.le(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t e : shape) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("extent exceeds u32");
    w.le(static_cast<std::uint32_t>(e));
  }
}

inline Shape get_shape(Reader& r) {
  const auto rank = r.le<std::uint8_t>();
  if (rank == 0) throw FormatError(r.source() + ": rank 0 tensor");
  Shape shape(rank);
  for (auto& e : shape) {
    e = r.le<std::uint32_t>();
    if (e == 0) throw FormatError(r.source() + ": zero extent");
  }
  return shape;
}

}  // namespace detail

inline std::vector<unsigned char> encode_weights(const std::vector<NamedTensor>& params) {
  detail::Writer w;
  w.bytes("SFFW", 4);
  w.le(kWeightsVersion);
  w.le(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("parameter name too long: " + p.name.substr(0, 32));
    }
    w.le(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    detail::put_shape(w, p.tensor.shape());
    for (double v : p.tensor.data()) w.f64(v);
  }
  return w.buffer();
}

inline std::vector<NamedTensor> decode_weights(std::vector<unsigned char> bytes,
                                               const std::string& source = "SFFW") {
  detail::Reader r(std::move(bytes), source);
  if (r.str(4) != "SFFW") throw FormatError(source + ": bad magic, expected SFFW");
  const auto version = r.le<std::uint16_t>();
  if (version != kWeightsVersion) {
    throw FormatError(source + ": unsupported SFFW version " + std::to_string(version));
  }
  const auto count = r.le<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>();
    std::string name = r.str(len);
    Shape shape = detail::get_shape(r);
    std::vector<double> values(shape_size(shape));
    r.need(values.size() * 8);
    for (double& v : values) v = r.f64();
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after last parameter");
  return out;
}

inline void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& params) {
  detail::write_file(path, encode_weights(params));
}

inline std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  return decode_weights(detail::read_file(path), path.string());
}

/// Values are narrowed to f32 on write.
inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
  detail::Writer w;
  w.bytes("SFFT", 4);
  w.le(kTensorVersion);
  detail::put_shape(w, t.shape());
  for (double v : t.data()) w.f32(static_cast<float>(v));
  return w.buffer();
}

inline Tensor decode_tensor(std::vector<unsigned char> bytes, const std::string& source = "SFFT") {
  detail::Reader r(std::move(bytes), source);
  if (r.str(4) != "SFFT") throw FormatError(source + ": bad magic, expected SFFT");
  const auto version = r.le<std::uint16_t>();
  if (version != kTensorVersion) {
    throw FormatError(source + ": unsupported SFFT version " + std::to_string(version));
  }
  Shape shape = detail::get_shape(r);
  std::vector<double> values(shape_size(shape));
  r.need(values.size() * 4);
  for (double& v : values) v = r.f32();
  if (!r.done()) throw FormatError(source + ": trailing bytes after tensor data");
  return Tensor(std::move(shape), std::move(values));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  return decode_tensor(detail::read_file(path), path.string());
}

}  // namespace sffda::io
