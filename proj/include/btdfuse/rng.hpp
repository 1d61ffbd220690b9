#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace btdfuse {

// Counter-based Gaussian generator. Every draw is a pure function of
// (seed, stream, index), so filling a buffer in parallel gives the same
// bits as filling it serially.
namespace rng {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t word_at(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t index) {
  return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

// Uniform in (0, 1]; never returns 0 so log() below stays finite.
inline double uniform_at(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t index) {
  const std::uint64_t bits = word_at(seed, stream, index) >> 11;
  return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two decorrelated uniforms.
inline double normal_at(std::uint64_t seed, std::uint64_t stream,
                        std::uint64_t index) {
  const double u1 = uniform_at(seed, stream, 2 * index);
  const double u2 = uniform_at(seed, stream, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

// Named sub-streams so independent consumers of one user seed never overlap.
inline std::uint64_t stream_id(const char* tag, std::uint64_t salt = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = tag; *p; ++p) h = (h ^ static_cast<unsigned char>(*p)) * 0x100000001b3ULL;
  return mix64(h ^ salt);
}

inline void fill_normal(double* dst, std::size_t n, std::uint64_t seed,
                        std::uint64_t stream) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = normal_at(seed, stream, i);
}

}  // namespace rng
}  // namespace btdfuse
