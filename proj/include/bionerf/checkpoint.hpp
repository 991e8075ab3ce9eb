// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Binary tensor archive.
//
//   "BNRF"  u32 version
//   repeated until EOF:
//     u16 name length, UTF-8 name, u8 rank, u32 extent * rank, f32 payload
//
// All integers and floats are little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bionerf/errors.hpp"
#include "bionerf/tensor.hpp"

namespace bionerf {

inline constexpr char kCheckpointMagic[4] = {'B', 'N', 'R', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + t.name.substr(0, 32));
    if (t.extents.size() > 0xFF) throw FormatError("tensor rank too large: " + t.name);
    std::size_t count = 1;
    for (auto e : t.extents) count *= e;
    if (count != t.values.size()) throw FormatError("tensor " + t.name + " extents do not match payload");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.extents.size()));
    for (auto e : t.extents) detail::put_le<std::uint32_t>(out, e);
    for (float f : t.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  detail::ByteReader in(bytes);
  in.get_string(4);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  std::vector<NamedTensor> out;
  while (!in.done()) {
    NamedTensor t;
    t.name = in.get_string(in.get<std::uint16_t>());
    const auto rank = in.get<std::uint8_t>();
    std::size_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      t.extents.push_back(in.get<std::uint32_t>());
      count *= t.extents.back();
    }
    if (count > bytes.size() / 4) throw FormatError("tensor " + t.name + " larger than the file");
    t.values.resize(count);
    for (auto& f : t.values) f = std::bit_cast<float>(in.get<std::uint32_t>());
    out.push_back(std::move(t));
  }
  return out;
}

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_checkpoint(tensors);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline NamedTensor to_named(const std::string& name, const Tensor<float>& t) {
  NamedTensor n{name, {}, std::vector<float>(t.values().begin(), t.values().end())};
  for (auto d : t.shape().dims()) n.extents.push_back(static_cast<std::uint32_t>(d));
  return n;
}

inline const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

inline const NamedTensor* find_tensor_or_null(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

/// Copies a stored tensor into a live one after checking the shape.
inline void load_into(const NamedTensor& src, std::span<float> dst, const Shape& shape) {
  std::vector<Index> dims(src.extents.begin(), src.extents.end());
  if (Shape(dims) != shape) {
    throw FormatError("tensor " + src.name + " has shape " + Shape(dims).str() + ", expected " + shape.str());
  }
  std::copy(src.values.begin(), src.values.end(), dst.begin());
}

}  // namespace bionerf
