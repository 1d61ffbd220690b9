#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "btdfuse/degradation.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {

struct MetricsReport {
  double rsnr_db = 0.0;
  double ssim = 0.0;
  double cc = 0.0;
  double ergas = 0.0;
  double rmse = 0.0;
  double sam_rad = 0.0;
  double nre = 0.0;
};

inline constexpr double kRsnrCapDb = 300.0;

namespace detail {

// Mean windowed SSIM of one band, Gaussian window (odd size w, std 1.5),
// windows fully inside the band.
inline double ssim_band(const Matrix& ref, const Matrix& est, double c1, double c2, int w) {
  const int half = w / 2;
  const std::vector<double> g1 = gaussian_kernel(w, 1.5);
  Matrix win(w, w);
  for (int a = 0; a < w; ++a)
    for (int b = 0; b < w; ++b)
      win(a, b) = g1[static_cast<std::size_t>(a)] * g1[static_cast<std::size_t>(b)];

  double acc = 0.0;
  long long count = 0;
  for (int ci = half; ci < ref.rows() - half; ++ci) {
    for (int cj = half; cj < ref.cols() - half; ++cj) {
      const auto x = ref.block(ci - half, cj - half, w, w).array();
      const auto y = est.block(ci - half, cj - half, w, w).array();
      const auto wa = win.array();
      const double mx = (wa * x).sum();
      const double my = (wa * y).sum();
      const double sxx = (wa * x * x).sum() - mx * mx;
      const double syy = (wa * y * y).sum() - my * my;
      const double sxy = (wa * x * y).sum() - mx * my;
      const double num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
      const double den = (mx * mx + my * my + c1) * (sxx + syy + c2);
      acc += num / den;
      ++count;
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : 1.0;
}

}  // namespace detail

// The six fusion-quality metrics plus the normalized reconstruction error.
// `ratio` is the spatial downsampling factor entering ERGAS.
inline MetricsReport compute_metrics(const Tensor3& reference, const Tensor3& estimate,
                                     int ratio) {
  if (!reference.same_dims(estimate))
    throw std::invalid_argument("compute_metrics: dims differ");
  if (ratio < 1) throw std::invalid_argument("compute_metrics: ratio must be >= 1");
  const double ref_norm = frobenius_norm(reference);
  if (ref_norm == 0.0) throw std::invalid_argument("compute_metrics: zero reference");

  const int I = reference.dim(0), J = reference.dim(1), K = reference.dim(2);
  const auto numel = static_cast<double>(reference.size());
  const Tensor3 err = estimate - reference;
  const double err_norm = frobenius_norm(err);

  MetricsReport rep;
  rep.nre = err_norm / ref_norm;
  rep.rmse = err_norm / std::sqrt(numel);
  rep.rsnr_db = err_norm == 0.0
                    ? kRsnrCapDb
                    : std::min(kRsnrCapDb, 20.0 * std::log10(ref_norm / err_norm));

  // Band-wise: Pearson correlation and the ERGAS accumulator.
  double cc_acc = 0.0;
  int cc_bands = 0;
  double ergas_acc = 0.0;
  int ergas_bands = 0;
  const double band_numel = static_cast<double>(I) * J;
  for (int k = 0; k < K; ++k) {
    const Eigen::Map<const Matrix> rb(reference.data() + static_cast<std::size_t>(k) * I * J, I, J);
    const Eigen::Map<const Matrix> eb(estimate.data() + static_cast<std::size_t>(k) * I * J, I, J);
    const double rmean = rb.mean(), emean = eb.mean();
    const auto rc = rb.array() - rmean;
    const auto ec = eb.array() - emean;
    const double rvar = (rc * rc).sum(), evar = (ec * ec).sum();
    if (rvar > 0.0 && evar > 0.0) {
      cc_acc += (rc * ec).sum() / std::sqrt(rvar * evar);
      ++cc_bands;
    }
    const double band_rmse = std::sqrt((rb - eb).squaredNorm() / band_numel);
    if (rmean != 0.0) {
      ergas_acc += (band_rmse / rmean) * (band_rmse / rmean);
      ++ergas_bands;
    }
  }
  rep.cc = cc_bands > 0 ? cc_acc / cc_bands : 0.0;
  rep.ergas = ergas_bands > 0
                  ? (100.0 / ratio) * std::sqrt(ergas_acc / ergas_bands)
                  : 0.0;

  // SAM: mean spectral angle over pixels, zero-norm fibers skipped.
  double sam_acc = 0.0;
  long long sam_count = 0;
  for (int j = 0; j < J; ++j) {
    for (int i = 0; i < I; ++i) {
      double dot = 0.0, nr = 0.0, ne = 0.0;
      for (int k = 0; k < K; ++k) {
        const double rv = reference(i, j, k), ev = estimate(i, j, k);
        dot += rv * ev;
        nr += rv * rv;
        ne += ev * ev;
      }
      if (nr == 0.0 || ne == 0.0) continue;
      const double cosang = std::clamp(dot / std::sqrt(nr * ne), -1.0, 1.0);
      sam_acc += std::acos(cosang);
      ++sam_count;
    }
  }
  rep.sam_rad = sam_count > 0 ? sam_acc / static_cast<double>(sam_count) : 0.0;

  // SSIM over bands; window size clamps down for tiny spatial dims.
  double range = 0.0;
  {
    double lo = reference.data()[0], hi = reference.data()[0];
    for (std::size_t n = 1; n < reference.size(); ++n) {
      lo = std::min(lo, reference.data()[n]);
      hi = std::max(hi, reference.data()[n]);
    }
    range = hi - lo;
  }
  if (range <= 0.0) range = 1.0;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  int w = std::min({11, I, J});
  if (w % 2 == 0) --w;
  double ssim_acc = 0.0;
  for (int k = 0; k < K; ++k) {
    const Eigen::Map<const Matrix> rb(reference.data() + static_cast<std::size_t>(k) * I * J, I, J);
    const Eigen::Map<const Matrix> eb(estimate.data() + static_cast<std::size_t>(k) * I * J, I, J);
    ssim_acc += detail::ssim_band(rb, eb, c1, c2, w);
  }
  rep.ssim = ssim_acc / K;
  return rep;
}

}  // namespace btdfuse
