// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary tensor container:
//
//   bytes 0..3   "FEAT"
//   u32          format version (1)
//   u32          dtype (1 = f32, 2 = f64)
//   u32          rank
//   u64[rank]    dims
//   payload      row-major, little-endian
//
// All integers are little-endian.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "feat/error.hpp"
#include "feat/tensor.hpp"

namespace feat::io {

enum class DType : std::uint32_t { kF32 = 1, kF64 = 2 };

inline constexpr std::uint32_t kTensorFileVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("tensor file: truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

/// Serialises `t`. With kF32 each value is rounded to float.
inline std::string encode_tensor(const Tensor& t, DType dtype = DType::kF64) {
  std::string out = "FEAT";
  detail::put_le<std::uint32_t>(out, kTensorFileVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  for (double v : t.values()) {
    if (dtype == DType::kF32) {
      detail::put_le<float>(out, static_cast<float>(v));
    } else {
      detail::put_le<double>(out, v);
    }
  }
  return out;
}

struct DecodedTensor {
  Tensor tensor;
  DType dtype = DType::kF64;
};

inline DecodedTensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "FEAT") != 0) throw FormatError("tensor file: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kTensorFileVersion) {
    throw FormatError("tensor file: unsupported version " + std::to_string(version));
  }
  const auto code = detail::get_le<std::uint32_t>(bytes, pos);
  if (code != 1 && code != 2) throw FormatError("tensor file: unknown dtype " + std::to_string(code));
  const DType dtype = static_cast<DType>(code);
  const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
  if (rank > 16) throw FormatError("tensor file: rank " + std::to_string(rank) + " too large");
  Shape shape;
  for (std::uint32_t k = 0; k < rank; ++k) {
    shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(bytes, pos)));
  }
  const std::size_t n = shape_size(shape);
  const std::size_t width = dtype == DType::kF32 ? 4 : 8;
  if (bytes.size() - pos != n * width) {
    throw FormatError("tensor file: payload is " + std::to_string(bytes.size() - pos) +
                      " bytes, expected " + std::to_string(n * width));
  }
  Tensor t(shape);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = dtype == DType::kF32 ? static_cast<double>(detail::get_le<float>(bytes, pos))
                                : detail::get_le<double>(bytes, pos);
  }
  return DecodedTensor{std::move(t), dtype};
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path + "'");
}

inline void save_tensor(const std::string& path, const Tensor& t, DType dtype = DType::kF64) {
  write_file(path, encode_tensor(t, dtype));
}

inline DecodedTensor load_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

}  // namespace feat::io
