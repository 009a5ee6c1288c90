#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "mam4wf/errors.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf {

// Array container ("MAMF"): magic, version byte, dtype code (1 = float32,
// 2 = float64), rank as u8, shape as little-endian u64, row-major payload.
// Multi-byte fields are written little-endian explicitly; the format is
// byte-identical across hosts.

namespace io_detail {

constexpr char kMagic[4] = {'M', 'A', 'M', 'F'};
constexpr uint8_t kVersion = 1;

template <typename T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "container supports float32/float64");
  return std::is_same_v<T, float> ? 1 : 2;
}

inline void put_u64(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("array container: truncated header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename T>
void put_scalar(std::ostream& out, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  if constexpr (sizeof(T) == 4) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(b, 4);
  } else {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
  }
}

template <typename T>
T get_scalar(std::istream& in) {
  if constexpr (sizeof(T) == 4) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("array container: truncated payload");
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(b[i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, 4);
    return v;
  } else {
    uint64_t bits = get_u64(in);
    T v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
}

}  // namespace io_detail

template <typename T>
void write_array(std::ostream& out, const Tensor<T>& array) {
  if (!array.all_finite())
    throw ArgumentError("refusing to serialize non-finite array");
  if (array.rank() > 255) throw ArgumentError("rank exceeds container limit");
  out.write(io_detail::kMagic, 4);
  out.put(static_cast<char>(io_detail::kVersion));
  out.put(static_cast<char>(io_detail::dtype_code<T>()));
  out.put(static_cast<char>(array.rank()));
  for (int64_t i = 0; i < array.rank(); ++i)
    io_detail::put_u64(out, static_cast<uint64_t>(array.dim(i)));
  for (int64_t i = 0; i < array.numel(); ++i)
    io_detail::put_scalar<T>(out, array[i]);
  if (!out) throw IoError("array container: write failed");
}

template <typename T>
Tensor<T> read_array(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, io_detail::kMagic, 4) != 0)
    throw FormatError("array container: bad magic");
  const int version = in.get();
  if (version != io_detail::kVersion)
    throw FormatError("array container: unsupported version " +
                      std::to_string(version));
  const int dtype = in.get();
  const int rank = in.get();
  if (!in) throw FormatError("array container: truncated header");
  if (dtype != io_detail::dtype_code<T>())
    throw FormatError("array container: dtype code " + std::to_string(dtype) +
                      " does not match requested scalar type");
  std::vector<int64_t> shape(static_cast<size_t>(rank));
  for (auto& d : shape) {
    d = static_cast<int64_t>(io_detail::get_u64(in));
    if (d < 0) throw FormatError("array container: negative dimension");
  }
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = io_detail::get_scalar<T>(in);
  return t;
}

template <typename T>
void save_array(const std::string& path, const Tensor<T>& array) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  write_array(f, array);
}

template <typename T>
Tensor<T> load_array(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  Tensor<T> t = read_array<T>(f);
  // A standalone file ends exactly after the payload.
  f.peek();
  if (!f.eof()) throw FormatError("array container: trailing bytes in " + path);
  return t;
}

}  // namespace mam4wf
