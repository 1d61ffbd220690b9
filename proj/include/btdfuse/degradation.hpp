#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "btdfuse/rng.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {

using BandWindows = std::vector<std::vector<int>>;

// Symmetric (reflect) padding index: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Normalized 1-D Gaussian kernel of odd length.
inline std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0)
    throw std::invalid_argument("gaussian_kernel: size must be a positive odd integer");
  if (size == 1) return {1.0};
  if (sigma <= 0) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  std::vector<double> k(static_cast<std::size_t>(size));
  const int h = size / 2;
  double sum = 0.0;
  for (int u = -h; u <= h; ++u) {
    k[static_cast<std::size_t>(u + h)] = std::exp(-0.5 * (u / sigma) * (u / sigma));
    sum += k[static_cast<std::size_t>(u + h)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// P = S * K: Gaussian blur with reflect padding followed by decimation at
// offsets floor(ratio/2) + t*ratio. Rows sum to 1 exactly.
inline Matrix build_spatial(int n_hi, int ratio, int blur_size, double blur_sigma) {
  if (n_hi < 1 || ratio < 1) throw std::invalid_argument("build_spatial: bad n_hi/ratio");
  if (n_hi % ratio != 0)
    throw std::invalid_argument("build_spatial: n_hi must be divisible by ratio");
  const std::vector<double> kernel = gaussian_kernel(blur_size, blur_sigma);
  const int h = blur_size / 2;
  const int n_lo = n_hi / ratio;
  const int phase = ratio / 2;
  Matrix p = Matrix::Zero(n_lo, n_hi);
  for (int t = 0; t < n_lo; ++t) {
    const int center = phase + t * ratio;
    for (int u = -h; u <= h; ++u)
      p(t, reflect_index(center + u, n_hi)) += kernel[static_cast<std::size_t>(u + h)];
  }
  return p;
}

// Row k' averages the bands in window k'. Overlap is allowed.
inline Matrix build_spectral(int k_h, const BandWindows& windows) {
  if (k_h < 1) throw std::invalid_argument("build_spectral: K_H must be >= 1");
  if (windows.empty()) throw std::invalid_argument("build_spectral: no band windows");
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(windows.size()), k_h);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w].empty()) throw std::invalid_argument("build_spectral: empty band window");
    const double weight = 1.0 / static_cast<double>(windows[w].size());
    for (int band : windows[w]) {
      if (band < 0 || band >= k_h)
        throw std::invalid_argument("build_spectral: band index out of [0, K_H)");
      p(static_cast<Eigen::Index>(w), band) += weight;
    }
  }
  return p;
}

// K_M contiguous windows of equal length covering [0, K_H).
inline BandWindows uniform_band_windows(int k_h, int k_m) {
  if (k_m < 1 || k_m > k_h) throw std::invalid_argument("uniform_band_windows: bad K_M");
  BandWindows windows(static_cast<std::size_t>(k_m));
  for (int w = 0; w < k_m; ++w) {
    const int lo = static_cast<int>(static_cast<long long>(w) * k_h / k_m);
    const int hi = static_cast<int>(static_cast<long long>(w + 1) * k_h / k_m);
    for (int b = lo; b < hi; ++b) windows[static_cast<std::size_t>(w)].push_back(b);
  }
  return windows;
}

struct DegradationParams {
  int blur_size = 9;
  double blur_sigma = 0.0;  // 0 means "use ratio / 2"
  int ratio = 1;
  BandWindows band_windows;

  double effective_sigma() const { return blur_sigma > 0 ? blur_sigma : 0.5 * ratio; }
};

struct DegradationSet {
  Matrix P1;  // I_H x I_M
  Matrix P2;  // J_H x J_M
  Matrix PM;  // K_M x K_H
  DegradationParams params;

  void validate_full_row_rank() const {
    for (const Matrix* m : {&P1, &P2, &PM}) {
      const Vector s = singular_values(*m);
      if (s(s.size() - 1) <= 1e-10 * s(0))
        throw std::runtime_error("DegradationSet: operator is not full row rank");
    }
  }
};

inline DegradationSet build_degradation(const std::array<int, 3>& dims_sri,
                                        const DegradationParams& params) {
  DegradationSet set;
  set.params = params;
  set.P1 = build_spatial(dims_sri[0], params.ratio, params.blur_size, params.effective_sigma());
  set.P2 = build_spatial(dims_sri[1], params.ratio, params.blur_size, params.effective_sigma());
  set.PM = build_spectral(dims_sri[2], params.band_windows);
  return set;
}

// Y_H = Y_S x1 P1 x2 P2
inline Tensor3 degrade_spatial(const Tensor3& sri, const Matrix& p1, const Matrix& p2) {
  return mode_product(mode_product(sri, p1, 1), p2, 2);
}

// Y_M = Y_S x3 PM
inline Tensor3 degrade_spectral(const Tensor3& sri, const Matrix& pm) {
  return mode_product(sri, pm, 3);
}

// Additive white Gaussian noise calibrated so that
// 10*log10(||t||^2 / E||eps||^2) == snr_db. Deterministic per (seed, index).
inline Tensor3 add_noise(const Tensor3& t, double snr_db, std::uint64_t seed) {
  const double power = squared_norm(t) / static_cast<double>(t.size());
  if (power == 0.0) throw std::invalid_argument("add_noise: SNR undefined for a zero tensor");
  const double sigma = std::sqrt(power * std::pow(10.0, -snr_db / 10.0));
  Tensor3 out = t;
  const std::uint64_t stream = rng::stream_id("awgn");
  for (std::size_t n = 0; n < out.size(); ++n)
    out.data()[n] += sigma * rng::normal_at(seed, stream, n);
  return out;
}

}  // namespace btdfuse
