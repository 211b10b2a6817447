#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "recgen/error.hpp"

// Little-endian primitives shared by the checkpoint and embedding formats.
namespace recgen::binary {

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

}  // namespace detail

inline void write_u32(std::ostream& out, std::uint32_t v) {
  v = detail::to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  write_u32(out, bits);
}

inline std::uint32_t read_u32(std::istream& in, std::string_view what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError("unexpected end of file while reading " + std::string(what));
  }
  return detail::to_little(v);
}

inline float read_f32(std::istream& in, std::string_view what) {
  return std::bit_cast<float>(read_u32(in, what));
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
  std::string buf(magic.size(), '\0');
  if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || buf != magic) {
    throw DataError("not a " + std::string(what) + " file (bad magic)");
  }
}

// Tensor record: rows, cols, then rows*cols float32 in row-major order.
inline void write_tensor(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f32(out, static_cast<float>(m(r, c)));
  }
}

inline void read_tensor(std::istream& in, Eigen::MatrixXd& m, std::string_view name) {
  const auto rows = read_u32(in, name);
  const auto cols = read_u32(in, name);
  if (rows != m.rows() || cols != m.cols()) {
    throw DataError("tensor '" + std::string(name) + "' has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()));
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_f32(in, name);
  }
}

}  // namespace recgen::binary
