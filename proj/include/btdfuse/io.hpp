#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "btdfuse/tensor.hpp"

namespace btdfuse {

// "T3B1" tensor file: 4 magic bytes, three little-endian uint32 dims
// (I, J, K), then I*J*K little-endian float64 in canonical layout.
namespace t3b1 {

static_assert(std::endian::native == std::endian::little,
              "T3B1 I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'T', '3', 'B', '1'};

inline void write(const std::filesystem::path& path, const Tensor3& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("T3B1: cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(t.dim(0)),
                                 static_cast<std::uint32_t>(t.dim(1)),
                                 static_cast<std::uint32_t>(t.dim(2))};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw std::runtime_error("T3B1: write failed: " + path.string());
}

inline Tensor3 read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("T3B1: cannot open for reading: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("T3B1: bad magic in " + path.string());
  std::uint32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw std::runtime_error("T3B1: truncated header in " + path.string());
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
    throw std::runtime_error("T3B1: zero dimension in " + path.string());
  Tensor3 t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]));
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw std::runtime_error("T3B1: truncated payload in " + path.string());
  return t;
}

// Matrices travel as (rows, cols, 1) tensors; column-major either way.
inline void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  Tensor3 t(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1);
  Eigen::Map<Matrix>(t.data(), m.rows(), m.cols()) = m;
  write(path, t);
}

inline Matrix read_matrix(const std::filesystem::path& path) {
  Tensor3 t = read(path);
  if (t.dim(2) != 1)
    throw std::runtime_error("T3B1: expected a matrix (K == 1) in " + path.string());
  return Eigen::Map<const Matrix>(t.data(), t.dim(0), t.dim(1));
}

}  // namespace t3b1
}  // namespace btdfuse
