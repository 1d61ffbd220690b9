#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "btdfuse/degradation.hpp"
#include "btdfuse/model.hpp"
#include "btdfuse/regularization.hpp"
#include "btdfuse/rng.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {

struct SyntheticSpec {
  std::array<int, 3> dims_sri{0, 0, 0};  // (I_M, J_M, K_H)
  int k_m = 0;
  int r = 0;
  std::array<int, 3> ranks{0, 0, 0};  // uniform (L, M, N)
  std::optional<double> snr_db;       // absent: noiseless
  std::uint64_t seed = 0;
  DegradationParams degradation;      // band_windows empty: uniform K_M windows

  void validate() const {
    for (int d : dims_sri)
      if (d < 1) throw std::invalid_argument("SyntheticSpec: dims must be positive");
    if (dims_sri[0] % degradation.ratio != 0 || dims_sri[1] % degradation.ratio != 0)
      throw std::invalid_argument("SyntheticSpec: spatial dims must divide by ratio");
    if (r < 1) throw std::invalid_argument("SyntheticSpec: R must be >= 1");
    if (k_m < 1 || k_m > dims_sri[2]) throw std::invalid_argument("SyntheticSpec: bad K_M");
    if (ranks[0] < 1 || ranks[1] < 1 || ranks[2] < 1 ||
        ranks[0] > dims_sri[0] || ranks[1] > dims_sri[1] || ranks[2] > dims_sri[2])
      throw std::invalid_argument("SyntheticSpec: infeasible ranks");
  }
};

struct SyntheticInstance {
  LmnModel truth;
  Tensor3 sri;
  Tensor3 hsi;
  Tensor3 msi;
  DegradationSet degradation;
  RecoverabilityReport conditions_nonblind;
  RecoverabilityReport conditions_blind;
};

// Ground-truth factors drawn i.i.d. standard Gaussian, then degraded
// observations, with optional SNR-calibrated noise on both of them.
inline SyntheticInstance generate(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticInstance inst;
  inst.truth = make_special_shape(ModelKind::kLmn, spec.dims_sri,
                                  uniform_ranks(spec.r, spec.ranks[0], spec.ranks[1], spec.ranks[2]),
                                  spec.seed);
  inst.sri = reconstruct(inst.truth);

  DegradationParams params = spec.degradation;
  if (params.band_windows.empty())
    params.band_windows = uniform_band_windows(spec.dims_sri[2], spec.k_m);
  if (static_cast<int>(params.band_windows.size()) != spec.k_m)
    throw std::invalid_argument("generate: band windows do not match K_M");
  inst.degradation = build_degradation(spec.dims_sri, params);

  inst.hsi = degrade_spatial(inst.sri, inst.degradation.P1, inst.degradation.P2);
  inst.msi = degrade_spectral(inst.sri, inst.degradation.PM);
  if (spec.snr_db) {
    inst.hsi = add_noise(inst.hsi, *spec.snr_db, rng::mix64(spec.seed ^ rng::stream_id("noise_hsi")));
    inst.msi = add_noise(inst.msi, *spec.snr_db, rng::mix64(spec.seed ^ rng::stream_id("noise_msi")));
  }

  const auto rank_list =
      uniform_ranks(spec.r, spec.ranks[0], spec.ranks[1], spec.ranks[2]);
  const std::array<int, 2> dims_hsi{inst.hsi.dim(0), inst.hsi.dim(1)};
  inst.conditions_nonblind =
      check_recoverability(spec.dims_sri, dims_hsi, spec.k_m, rank_list, spec.r, false);
  inst.conditions_blind =
      check_recoverability(spec.dims_sri, dims_hsi, spec.k_m, rank_list, spec.r, true);
  return inst;
}

struct SpectrumReport {
  Vector values;             // descending singular values
  Vector energy_fractions;   // cumulative squared-value fractions, ends at 1
};

inline SpectrumReport unfolding_spectrum(const Tensor3& t, int mode) {
  SpectrumReport rep;
  rep.values = singular_values(unfold(t, mode));
  rep.energy_fractions.resize(rep.values.size());
  const double total = rep.values.squaredNorm();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rep.values.size(); ++i) {
    acc += rep.values(i) * rep.values(i);
    rep.energy_fractions(i) = total > 0.0 ? acc / total : 0.0;
  }
  return rep;
}

struct SmoothnessProfile {
  std::array<Tensor3, 3> profiles;  // |t x1 H1|, |t x2 H2|, |t x3 H3|
  std::array<double, 3> max_abs{0.0, 0.0, 0.0};
};

// First differences along the two spatial modes, second differences along
// the spectral mode; summaries are normalized by each profile's largest value.
inline SmoothnessProfile smoothness_profile(const Tensor3& t) {
  if (t.dim(0) < 2 || t.dim(1) < 2 || t.dim(2) < 3)
    throw std::invalid_argument("smoothness_profile: dims too small for the stencils");
  SmoothnessProfile out;
  const Matrix h[3] = {build_H1(t.dim(0)), build_H2(t.dim(1)), build_H3(t.dim(2))};
  for (int m = 0; m < 3; ++m) {
    Tensor3 d = mode_product(t, h[m], m + 1);
    for (std::size_t n = 0; n < d.size(); ++n) d.data()[n] = std::abs(d.data()[n]);
    double mx = 0.0;
    for (std::size_t n = 0; n < d.size(); ++n) mx = std::max(mx, d.data()[n]);
    out.profiles[static_cast<std::size_t>(m)] = std::move(d);
    out.max_abs[static_cast<std::size_t>(m)] = mx;
  }
  return out;
}

inline long long sparsity_count(const Tensor3& t, double threshold) {
  if (threshold < 0) throw std::invalid_argument("sparsity_count: threshold must be >= 0");
  long long count = 0;
  for (std::size_t n = 0; n < t.size(); ++n)
    if (std::abs(t.data()[n]) <= threshold) ++count;
  return count;
}

// Default tolerance for "zero": floating-point reconstructions are never
// exactly zero.
inline double default_sparsity_threshold(const Tensor3& t) {
  double mx = 0.0;
  for (std::size_t n = 0; n < t.size(); ++n) mx = std::max(mx, std::abs(t.data()[n]));
  return 1e-12 * mx;
}

}  // namespace btdfuse
