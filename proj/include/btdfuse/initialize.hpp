#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "btdfuse/degradation.hpp"
#include "btdfuse/model.hpp"
#include "btdfuse/rng.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {
namespace detail {

using ComplexMatrix = Eigen::MatrixXcd;

// Leading left singular vectors of an unfolding, split into R factor blocks.
inline std::vector<Matrix> partitioned_basis(const Matrix& unfolding,
                                             const std::vector<int>& widths) {
  int total = 0;
  for (int w : widths) total += w;
  if (total > std::min(unfolding.rows(), unfolding.cols()))
    throw std::invalid_argument("initialize: requested rank exceeds data dimension");
  const SvdTriplets svd = top_singular_triplets(unfolding, total);
  std::vector<Matrix> parts;
  int at = 0;
  for (int w : widths) {
    parts.push_back(svd.u.middleCols(at, w));
    at += w;
  }
  return parts;
}

// Deterministic pure-pixel selection: repeatedly take the column of largest
// residual norm and deflate its direction away.
inline std::vector<int> pure_pixel_columns(const Matrix& x, int count) {
  Matrix res = x;
  std::vector<int> picked;
  for (int s = 0; s < count; ++s) {
    Eigen::Index best = 0;
    double best_norm = -1.0;
    for (Eigen::Index c = 0; c < res.cols(); ++c) {
      const double n = res.col(c).norm();
      if (n > best_norm) {
        best_norm = n;
        best = c;
      }
    }
    picked.push_back(static_cast<int>(best));
    if (best_norm <= 0.0) continue;
    const Vector q = res.col(best) / best_norm;
    res -= q * (q.transpose() * res);
  }
  return picked;
}

// Spectral basis candidates, one block per term: every column comes from the
// continued pure-pixel selection; leading singular directions fill in only
// when the selection runs out of independent columns.
inline std::vector<Matrix> spectral_bases(const Matrix& y3, const std::vector<int>& ns, int r) {
  const int k_h = static_cast<int>(y3.rows());
  int total = 0, n_max = 0;
  for (int n : ns) {
    total += n;
    n_max = std::max(n_max, n);
  }
  if (n_max > std::min<Eigen::Index>(k_h, y3.cols()))
    throw std::invalid_argument("initialize: spectral rank exceeds data dimension");
  const int selectable = static_cast<int>(std::min<Eigen::Index>(total, y3.cols()));
  const std::vector<int> picks = pure_pixel_columns(y3, selectable);
  SvdTriplets svd;
  const int pad_count = std::min<int>(n_max, static_cast<int>(std::min(y3.rows(), y3.cols())));
  if (pad_count > 0) svd = top_singular_triplets(y3, pad_count);
  std::vector<Matrix> out;
  int at = 0;
  for (int term = 0; term < r; ++term) {
    const int n = ns[static_cast<std::size_t>(term)];
    Matrix c(k_h, n);
    for (int j = 0; j < n; ++j) {
      if (at < selectable) {
        const Vector col = y3.col(picks[static_cast<std::size_t>(at++)]);
        c.col(j) = col.norm() > 0 ? Vector(col / col.norm()) : svd.u.col(j % pad_count);
      } else {
        c.col(j) = svd.u.col(j % pad_count);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

struct CoreFitTerm {
  const Tensor3* data;
  std::vector<Matrix> a_ops, b_ops, c_ops;  // per-term operators, one each per r
};

// Ridge-regularized joint least-squares core fit over one or more coupled
// data terms; returns the summed squared residual. Falls back to scaled
// Gaussian draws when the normal equations cannot be solved.
inline double fit_cores_multi(LmnModel& model, const std::vector<CoreFitTerm>& terms,
                              std::uint64_t seed) {
  const int r = model.R();
  std::vector<int> sizes(static_cast<std::size_t>(r));
  int total = 0;
  for (int t = 0; t < r; ++t) {
    const LmnTerm& term = model.terms[static_cast<std::size_t>(t)];
    sizes[static_cast<std::size_t>(t)] = term.L() * term.M() * term.N();
    total += sizes[static_cast<std::size_t>(t)];
  }
  Matrix gram = Matrix::Zero(total, total);
  Vector rhs = Vector::Zero(total);
  for (const CoreFitTerm& data_term : terms) {
    int row_at = 0;
    for (int s = 0; s < r; ++s) {
      const Matrix& as = data_term.a_ops[static_cast<std::size_t>(s)];
      const Matrix& bs = data_term.b_ops[static_cast<std::size_t>(s)];
      const Matrix& cs = data_term.c_ops[static_cast<std::size_t>(s)];
      {
        const Tensor3 proj =
            mode_product(mode_product(mode_product(*data_term.data, Matrix(as.transpose()), 1),
                                      Matrix(bs.transpose()), 2),
                         Matrix(cs.transpose()), 3);
        rhs.segment(row_at, sizes[static_cast<std::size_t>(s)]) +=
            Eigen::Map<const Vector>(proj.data(), static_cast<Eigen::Index>(proj.size()));
      }
      int col_at = 0;
      for (int t = 0; t < r; ++t) {
        const Matrix block =
            kron(Matrix(cs.transpose() * data_term.c_ops[static_cast<std::size_t>(t)]),
                 kron(Matrix(bs.transpose() * data_term.b_ops[static_cast<std::size_t>(t)]),
                      Matrix(as.transpose() * data_term.a_ops[static_cast<std::size_t>(t)])));
        gram.block(row_at, col_at, sizes[static_cast<std::size_t>(s)],
                   sizes[static_cast<std::size_t>(t)]) += block;
        col_at += sizes[static_cast<std::size_t>(t)];
      }
      row_at += sizes[static_cast<std::size_t>(s)];
    }
  }
  const double ridge = 1e-10 * std::max(1.0, gram.trace() / total);
  gram.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(gram);
  Vector d;
  bool ok = ldlt.info() == Eigen::Success;
  if (ok) {
    d = ldlt.solve(rhs);
    ok = d.allFinite();
  }
  if (ok) {
    int at = 0;
    for (int t = 0; t < r; ++t) {
      LmnTerm& term = model.terms[static_cast<std::size_t>(t)];
      Eigen::Map<Vector>(term.core.data(), sizes[static_cast<std::size_t>(t)]) =
          d.segment(at, sizes[static_cast<std::size_t>(t)]);
      at += sizes[static_cast<std::size_t>(t)];
    }
  } else {
    double data_norm = 0.0;
    for (const CoreFitTerm& dt : terms) data_norm = std::max(data_norm, frobenius_norm(*dt.data));
    const double scale =
        data_norm / (static_cast<double>(r) * std::sqrt(static_cast<double>(total) / r));
    for (int t = 0; t < r; ++t) {
      LmnTerm& term = model.terms[static_cast<std::size_t>(t)];
      rng::fill_normal(term.core.data(), term.core.size(), seed,
                       rng::stream_id("init_core_fallback", t));
      for (std::size_t n = 0; n < term.core.size(); ++n) term.core.data()[n] *= scale;
    }
  }
  // Residual via the fitted model.
  double residual = 0.0;
  for (const CoreFitTerm& data_term : terms) {
    Tensor3 acc(data_term.data->dim(0), data_term.data->dim(1), data_term.data->dim(2));
    for (int t = 0; t < r; ++t) {
      const LmnTerm& term = model.terms[static_cast<std::size_t>(t)];
      acc = acc + mode_product(mode_product(mode_product(term.core,
                                                         data_term.a_ops[static_cast<std::size_t>(t)], 1),
                                            data_term.b_ops[static_cast<std::size_t>(t)], 2),
                               data_term.c_ops[static_cast<std::size_t>(t)], 3);
    }
    residual += squared_norm(*data_term.data - acc);
  }
  return residual;
}

// ----- GEVD-informed partition of the joint spatial bases -----
//
// Each band of the observation is sum_r A_r G_{r,k} B_r^T with shared
// per-term column/row spaces. Projected onto the joint top singular bases
// the bands become S_k = P blockdiag(G_{r,k}) Q^T, so generic slice pencils
// share invariant subspaces aligned with the per-term blocks. Splitting the
// eigenvectors of S_a S_b^{-1} accordingly rotates the joint basis into the
// true per-term subspaces (exact for noiseless data, stable enough as an
// initial guess otherwise).

struct GevdBases {
  std::vector<Matrix> a_parts, b_parts;
};

inline Matrix real_basis_from_complex_span(const ComplexMatrix& w, int rank) {
  Matrix stacked(w.rows(), 2 * w.cols());
  stacked << w.real(), w.imag();
  const SvdTriplets svd = top_singular_triplets(stacked, rank);
  return svd.u;
}

inline double invariance_residual(const ComplexMatrix& op, const ComplexMatrix& basis) {
  const ComplexMatrix ob = op * basis;
  const ComplexMatrix gram = basis.adjoint() * basis;
  const ComplexMatrix coeff = gram.ldlt().solve(basis.adjoint() * ob);
  const double scale = std::max(1e-300, ob.norm());
  return (ob - basis * coeff).norm() / scale;
}

inline void enumerate_subsets(int n, int k, std::vector<std::vector<int>>& out) {
  std::vector<int> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    out.push_back(idx);
    int i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j)
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

// Attempts the pencil-based split of a collection of matrix slices sharing
// the block structure W_s = sum_r P_r G_{r,s} Q_r^T with square L x L
// blocks. Returns the per-term row-space and column-space bases, or nullopt
// when the instance does not qualify or the numerics look unsafe.
inline std::optional<GevdBases> pencil_partition(const std::vector<Matrix>& raw_slices, int l,
                                                 int r, std::uint64_t seed) {
  const int n = l * r;
  const int count = static_cast<int>(raw_slices.size());
  if (r < 2 || count < 3) return std::nullopt;
  if (n > std::min(raw_slices[0].rows(), raw_slices[0].cols()) || n > 12) return std::nullopt;

  Matrix row_stack(raw_slices[0].rows(), raw_slices[0].cols() * count);
  Matrix col_stack(raw_slices[0].cols(), raw_slices[0].rows() * count);
  for (int s = 0; s < count; ++s) {
    row_stack.middleCols(s * raw_slices[0].cols(), raw_slices[0].cols()) =
        raw_slices[static_cast<std::size_t>(s)];
    col_stack.middleCols(s * raw_slices[0].rows(), raw_slices[0].rows()) =
        raw_slices[static_cast<std::size_t>(s)].transpose();
  }
  const Matrix u_joint = top_singular_triplets(row_stack, n).u;
  const Matrix v_joint = top_singular_triplets(col_stack, n).u;

  std::vector<Matrix> slices;
  for (int s = 0; s < count; ++s)
    slices.push_back(u_joint.transpose() * raw_slices[static_cast<std::size_t>(s)] * v_joint);
  const int bands = count;
  auto combo = [&](std::uint64_t stream) {
    Matrix s = Matrix::Zero(n, n);
    for (int k = 0; k < bands; ++k)
      s += rng::normal_at(seed, stream, static_cast<std::uint64_t>(k)) * slices[static_cast<std::size_t>(k)];
    return s;
  };
  const Matrix sa = combo(rng::stream_id("gevd_a"));
  const Matrix sb = combo(rng::stream_id("gevd_b"));
  const Matrix sc = combo(rng::stream_id("gevd_c"));

  const Eigen::PartialPivLU<Matrix> lu_b(sb);
  const Matrix e_col = sa * lu_b.inverse();
  const Matrix e_chk = sc * lu_b.inverse();
  if (!e_col.allFinite() || !e_chk.allFinite()) return std::nullopt;

  Eigen::EigenSolver<Matrix> eig_col(e_col);
  if (eig_col.info() != Eigen::Success) return std::nullopt;
  const ComplexMatrix w_col = eig_col.eigenvectors();
  const Eigen::VectorXcd lambda_col = eig_col.eigenvalues();
  const ComplexMatrix e_chk_c = e_chk.cast<std::complex<double>>();

  // Row-side pencil shares the block eigenvalue sets.
  const Matrix f_row = (lu_b.solve(sa)).transpose();
  Eigen::EigenSolver<Matrix> eig_row(f_row);
  if (eig_row.info() != Eigen::Success) return std::nullopt;
  const ComplexMatrix w_row = eig_row.eigenvectors();
  const Eigen::VectorXcd lambda_row = eig_row.eigenvalues();

  // Greedy level-by-level split of the column eigenvectors into R groups of
  // size L, scored by invariance under the independent check pencil.
  std::vector<int> remaining(static_cast<std::size_t>(n));
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<std::vector<int>> groups;
  for (int level = 0; level < r; ++level) {
    if (static_cast<int>(remaining.size()) == l) {
      groups.push_back(remaining);
      remaining.clear();
      break;
    }
    std::vector<std::vector<int>> subsets;
    enumerate_subsets(static_cast<int>(remaining.size()), l, subsets);
    double best_score = 1e300;
    std::vector<int> best;
    for (const auto& sub : subsets) {
      ComplexMatrix basis(n, l);
      for (int j = 0; j < l; ++j)
        basis.col(j) = w_col.col(remaining[static_cast<std::size_t>(sub[static_cast<std::size_t>(j)])]);
      const double score = invariance_residual(e_chk_c, basis);
      if (score < best_score) {
        best_score = score;
        best = sub;
      }
    }
    std::vector<int> group, rest;
    std::vector<bool> taken(remaining.size(), false);
    for (int pos : best) taken[static_cast<std::size_t>(pos)] = true;
    for (std::size_t i = 0; i < remaining.size(); ++i)
      (taken[i] ? group : rest).push_back(remaining[i]);
    groups.push_back(group);
    remaining = rest;
  }
  if (static_cast<int>(groups.size()) != r) return std::nullopt;

  // Match row eigenvectors to the column groups by eigenvalue proximity.
  std::vector<std::vector<int>> row_groups(static_cast<std::size_t>(r));
  for (int j = 0; j < n; ++j) {
    int best_g = 0;
    double best_d = 1e300;
    for (int g = 0; g < r; ++g)
      for (int idx : groups[static_cast<std::size_t>(g)]) {
        const double d = std::abs(lambda_row(j) - lambda_col(idx));
        if (d < best_d) {
          best_d = d;
          best_g = g;
        }
      }
    row_groups[static_cast<std::size_t>(best_g)].push_back(j);
  }
  for (const auto& g : row_groups)
    if (static_cast<int>(g.size()) != l) return std::nullopt;

  GevdBases bases;
  for (int g = 0; g < r; ++g) {
    ComplexMatrix wc(n, l), wr(n, l);
    for (int j = 0; j < l; ++j) {
      wc.col(j) = w_col.col(groups[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)]);
      wr.col(j) = w_row.col(row_groups[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)]);
    }
    const Matrix p = real_basis_from_complex_span(wc, l);
    const Matrix q = real_basis_from_complex_span(wr, l);
    if (!p.allFinite() || !q.allFinite()) return std::nullopt;
    bases.a_parts.push_back(u_joint * p);
    bases.b_parts.push_back(v_joint * q);
  }
  return bases;
}

// Spatial split of a tensor observation: one slice per band.
inline std::optional<GevdBases> gevd_partition(const Tensor3& obs, int l, int r,
                                               std::uint64_t seed) {
  std::vector<Matrix> slices;
  for (int k = 0; k < obs.dim(2); ++k)
    slices.emplace_back(Eigen::Map<const Matrix>(
        obs.data() + static_cast<std::size_t>(k) * obs.dim(0) * obs.dim(1), obs.dim(0),
        obs.dim(1)));
  return pencil_partition(slices, l, r, seed);
}

// Mode-(2,3) split: slices along the first spatial mode expose the block
// structure shared by the mode-2 factors and the spectral factors.
inline std::optional<GevdBases> gevd_partition_spectral(const Tensor3& obs, int m, int r,
                                                        std::uint64_t seed) {
  std::vector<Matrix> slices;
  for (int i = 0; i < obs.dim(0); ++i) {
    Matrix w(obs.dim(1), obs.dim(2));
    for (int j = 0; j < obs.dim(1); ++j)
      for (int k = 0; k < obs.dim(2); ++k) w(j, k) = obs(i, j, k);
    slices.push_back(std::move(w));
  }
  return pencil_partition(slices, m, r, seed);
}

// Spatial bases for the LMN starting point: the pencil-informed split when
// it applies, otherwise the plain contiguous partition of the joint basis.
inline GevdBases spatial_bases(const Tensor3& obs, const std::vector<std::array<int, 3>>& ranks,
                               std::uint64_t seed) {
  std::vector<int> ls, ms;
  bool uniform_square = true;
  for (const auto& rk : ranks) {
    ls.push_back(rk[0]);
    ms.push_back(rk[1]);
    if (rk[0] != ranks[0][0] || rk[1] != ranks[0][1] || rk[0] != rk[1]) uniform_square = false;
  }
  if (uniform_square) {
    if (auto bases = gevd_partition(obs, ranks[0][0], static_cast<int>(ranks.size()), seed))
      return *bases;
  }
  GevdBases bases;
  bases.a_parts = partitioned_basis(unfold(obs, 1), ls);
  bases.b_parts = partitioned_basis(unfold(obs, 2), ms);
  return bases;
}

inline std::vector<int> identity_permutation(int r) {
  std::vector<int> idx(static_cast<std::size_t>(r));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// All permutations when the terms are interchangeable and R is small,
// otherwise just the identity.
inline std::vector<std::vector<int>> candidate_permutations(
    int r, const std::vector<std::array<int, 3>>& ranks) {
  bool uniform = true;
  for (const auto& rk : ranks) uniform = uniform && rk == ranks[0];
  if (!uniform || r > 5) return {identity_permutation(r)};
  std::vector<int> idx = identity_permutation(r);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(idx);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return out;
}

}  // namespace detail

// Starting point for the coupled fit: A_r/B_r from the top singular
// directions of the MSI mode-1/2 unfoldings split across terms, C_r from a
// deterministic pure-pixel selection on the HSI mode-3 unfolding (term
// assignment chosen by core-fit residual), cores from a ridge least-squares
// fit of the HSI. Pass deg = nullptr for the single-tensor problem.
inline LmnModel initialize(const Tensor3& y_h, const Tensor3& y_m,
                           const std::array<int, 3>& dims,
                           const std::vector<std::array<int, 3>>& ranks,
                           std::uint64_t seed, const DegradationSet* deg) {
  const int r = static_cast<int>(ranks.size());
  const detail::GevdBases bases = detail::spatial_bases(y_m, ranks, seed);
  std::vector<int> ns;
  for (const auto& rk : ranks) ns.push_back(rk[2]);
  const std::vector<Matrix> c_parts = detail::spectral_bases(unfold(y_h, 3), ns, r);

  LmnModel model;
  model.dims = dims;
  std::vector<Matrix> a_ops, b_ops;
  for (int t = 0; t < r; ++t) {
    LmnTerm term;
    term.A = bases.a_parts[static_cast<std::size_t>(t)];
    term.B = bases.b_parts[static_cast<std::size_t>(t)];
    term.C = c_parts[static_cast<std::size_t>(t)];
    term.core = Tensor3(ranks[static_cast<std::size_t>(t)][0], ranks[static_cast<std::size_t>(t)][1],
                        ranks[static_cast<std::size_t>(t)][2]);
    model.terms.push_back(std::move(term));
    if (deg) {
      a_ops.push_back(deg->P1 * model.terms.back().A);
      b_ops.push_back(deg->P2 * model.terms.back().B);
    } else {
      a_ops.push_back(model.terms.back().A);
      b_ops.push_back(model.terms.back().B);
    }
  }

  // Pick the spectral-block permutation whose core fit explains the HSI best.
  const auto perms = detail::candidate_permutations(r, ranks);
  double best = 1e300;
  LmnModel best_model = model;
  for (const auto& perm : perms) {
    LmnModel candidate = model;
    for (int t = 0; t < r; ++t)
      candidate.terms[static_cast<std::size_t>(t)].C =
          c_parts[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])];
    detail::CoreFitTerm fit_term;
    fit_term.data = &y_h;
    fit_term.a_ops = a_ops;
    fit_term.b_ops = b_ops;
    for (int t = 0; t < r; ++t)
      fit_term.c_ops.push_back(candidate.terms[static_cast<std::size_t>(t)].C);
    const double residual = detail::fit_cores_multi(candidate, {fit_term}, seed);
    if (residual < best) {
      best = residual;
      best_model = candidate;
    }
  }
  best_model.validate();
  return best_model;
}

namespace detail {

// Sum of principal-angle cosines between the column spaces of x and y.
inline double subspace_alignment(const Matrix& x, const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qx(x), qy(y);
  const Matrix qxm = qx.householderQ() * Matrix::Identity(x.rows(), x.cols());
  const Matrix qym = qy.householderQ() * Matrix::Identity(y.rows(), y.cols());
  return singular_values(Matrix(qxm.transpose() * qym)).sum();
}

// Joint least-squares refresh of one spatial factor block list given the
// anchored cores and the other factors: solves min ||unfolding - [X] stack||.
inline void anchored_factor_solve(std::vector<Matrix>& blocks, const Matrix& unfolding,
                                  const std::vector<Matrix>& contractions) {
  int total = 0;
  for (const Matrix& c : contractions) total += static_cast<int>(c.rows());
  Matrix stack(total, contractions[0].cols());
  int at = 0;
  for (const Matrix& c : contractions) {
    stack.middleRows(at, c.rows()) = c;
    at += static_cast<int>(c.rows());
  }
  Matrix gram = stack * stack.transpose();
  gram.diagonal().array() += 1e-12 * std::max(1.0, gram.trace() / total);
  const Matrix joint = gram.ldlt().solve(stack * unfolding.transpose()).transpose();
  at = 0;
  for (std::size_t t = 0; t < blocks.size(); ++t) {
    blocks[t] = joint.middleCols(at, contractions[t].rows());
    at += static_cast<int>(contractions[t].rows());
  }
}

}  // namespace detail

// Semi-blind starting point. The HSI carries the full spectral information,
// so the HSI-side factors, spectral bases and cores are derived first
// (pencil splits along both mode pairs when they apply, pure-pixel spectra
// otherwise); the MSI-side spatial factors are then solved by a few
// alternating least-squares sweeps against the anchored cores, which keeps
// both data terms in one consistent per-term gauge.
inline SemiBlindModel initialize_blind(const Tensor3& y_h, const Tensor3& y_m,
                                       const std::array<int, 3>& dims,
                                       const std::vector<std::array<int, 3>>& ranks,
                                       std::uint64_t seed, const Matrix& pm) {
  const int r = static_cast<int>(ranks.size());
  const detail::GevdBases hsi_bases = detail::spatial_bases(y_h, ranks, seed);
  std::vector<int> ns;
  for (const auto& rk : ranks) ns.push_back(rk[2]);

  SemiBlindModel model;
  model.base.dims = dims;
  for (int t = 0; t < r; ++t) {
    LmnTerm term;
    term.A = Matrix::Zero(dims[0], ranks[static_cast<std::size_t>(t)][0]);
    term.B = Matrix::Zero(dims[1], ranks[static_cast<std::size_t>(t)][1]);
    term.core = Tensor3(ranks[static_cast<std::size_t>(t)][0], ranks[static_cast<std::size_t>(t)][1],
                        ranks[static_cast<std::size_t>(t)][2]);
    model.base.terms.push_back(std::move(term));
    model.hsi_terms.push_back({hsi_bases.a_parts[static_cast<std::size_t>(t)],
                               hsi_bases.b_parts[static_cast<std::size_t>(t)]});
  }
  std::vector<Matrix> at_ops, bt_ops;
  for (int t = 0; t < r; ++t) {
    at_ops.push_back(model.hsi_terms[static_cast<std::size_t>(t)].Atilde);
    bt_ops.push_back(model.hsi_terms[static_cast<std::size_t>(t)].Btilde);
  }

  // Spectral bases, paired to the HSI-side terms.
  bool have_c = false;
  bool uniform_mn = true;
  for (const auto& rk : ranks)
    uniform_mn = uniform_mn && rk[1] == ranks[0][1] && rk[2] == ranks[0][2];
  if (uniform_mn && ranks[0][1] == ranks[0][2] && r >= 2) {
    if (auto spec_split = detail::gevd_partition_spectral(y_h, ranks[0][1], r, seed)) {
      // spec_split row side lives in the mode-2 space: pair to Btilde blocks.
      const auto perms = detail::candidate_permutations(r, ranks);
      double best = -1e300;
      std::vector<int> best_perm = detail::identity_permutation(r);
      for (const auto& perm : perms) {
        double score = 0.0;
        for (int t = 0; t < r; ++t)
          score += detail::subspace_alignment(
              bt_ops[static_cast<std::size_t>(t)],
              spec_split->a_parts[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])]);
        if (score > best) {
          best = score;
          best_perm = perm;
        }
      }
      for (int t = 0; t < r; ++t)
        model.base.terms[static_cast<std::size_t>(t)].C =
            spec_split->b_parts[static_cast<std::size_t>(best_perm[static_cast<std::size_t>(t)])];
      have_c = true;
    }
  }
  if (!have_c) {
    // Pure-pixel candidates, assigned by the HSI core-fit residual.
    const std::vector<Matrix> c_parts = detail::spectral_bases(unfold(y_h, 3), ns, r);
    const auto perms = detail::candidate_permutations(r, ranks);
    double best = 1e300;
    std::vector<Matrix> best_c = c_parts;
    for (const auto& perm : perms) {
      LmnModel candidate = model.base;
      detail::CoreFitTerm term;
      term.data = &y_h;
      term.a_ops = at_ops;
      term.b_ops = bt_ops;
      for (int t = 0; t < r; ++t) {
        candidate.terms[static_cast<std::size_t>(t)].C =
            c_parts[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])];
        term.c_ops.push_back(candidate.terms[static_cast<std::size_t>(t)].C);
      }
      const double residual = detail::fit_cores_multi(candidate, {term}, seed);
      if (residual < best) {
        best = residual;
        for (int t = 0; t < r; ++t)
          best_c[static_cast<std::size_t>(t)] = candidate.terms[static_cast<std::size_t>(t)].C;
      }
    }
    for (int t = 0; t < r; ++t)
      model.base.terms[static_cast<std::size_t>(t)].C = best_c[static_cast<std::size_t>(t)];
  }

  // Cores anchored by the HSI-side model.
  {
    detail::CoreFitTerm term;
    term.data = &y_h;
    term.a_ops = at_ops;
    term.b_ops = bt_ops;
    for (int t = 0; t < r; ++t)
      term.c_ops.push_back(model.base.terms[static_cast<std::size_t>(t)].C);
    detail::fit_cores_multi(model.base, {term}, seed);
  }

  // MSI-side spatial factors by alternating anchored least squares, started
  // from every candidate block pairing of the MSI split; the anchored cores
  // pull the blocks into the HSI-side gauge.
  {
    const detail::GevdBases msi_bases = detail::spatial_bases(y_m, ranks, seed);
    const Matrix ym1 = unfold(y_m, 1);
    const Matrix ym2 = unfold(y_m, 2);
    std::vector<Matrix> pm_c;
    for (int t = 0; t < r; ++t)
      pm_c.push_back(pm * model.base.terms[static_cast<std::size_t>(t)].C);

    auto als_residual = [&](std::vector<Matrix>& a_blocks, std::vector<Matrix>& b_blocks,
                            int sweeps) {
      for (int sweep = 0; sweep < sweeps; ++sweep) {
        std::vector<Matrix> u1;
        for (int t = 0; t < r; ++t) {
          const LmnTerm& term = model.base.terms[static_cast<std::size_t>(t)];
          u1.push_back(unfold(mode_product(mode_product(term.core, b_blocks[static_cast<std::size_t>(t)], 2),
                                           pm_c[static_cast<std::size_t>(t)], 3), 1));
        }
        detail::anchored_factor_solve(a_blocks, ym1, u1);
        std::vector<Matrix> u2;
        for (int t = 0; t < r; ++t) {
          const LmnTerm& term = model.base.terms[static_cast<std::size_t>(t)];
          u2.push_back(unfold(mode_product(mode_product(term.core, a_blocks[static_cast<std::size_t>(t)], 1),
                                           pm_c[static_cast<std::size_t>(t)], 3), 2));
        }
        detail::anchored_factor_solve(b_blocks, ym2, u2);
      }
      Tensor3 acc(y_m.dim(0), y_m.dim(1), y_m.dim(2));
      for (int t = 0; t < r; ++t) {
        const LmnTerm& term = model.base.terms[static_cast<std::size_t>(t)];
        acc = acc + mode_product(mode_product(mode_product(term.core,
                                                           a_blocks[static_cast<std::size_t>(t)], 1),
                                              b_blocks[static_cast<std::size_t>(t)], 2),
                                 pm_c[static_cast<std::size_t>(t)], 3);
      }
      return squared_norm(y_m - acc);
    };

    // The alternation is bilinear, so start it from every block pairing and
    // a few seeded gauge twists and keep the lowest-residual result.
    double best = 1e300;
    std::vector<Matrix> best_a, best_b;
    const int kGaugeTwists = 4;
    for (const auto& perm : detail::candidate_permutations(r, ranks)) {
      for (int twist = 0; twist < kGaugeTwists; ++twist) {
        std::vector<Matrix> a_blocks, b_blocks;
        for (int t = 0; t < r; ++t) {
          Matrix a = msi_bases.a_parts[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])];
          Matrix b = msi_bases.b_parts[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])];
          if (twist > 0) {
            Matrix ga(b.cols(), b.cols());
            rng::fill_normal(ga.data(), ga.size(), seed,
                             rng::stream_id("als_twist", 97 * twist + static_cast<std::uint64_t>(t)));
            b = b * (Matrix::Identity(b.cols(), b.cols()) + ga);
          }
          a_blocks.push_back(std::move(a));
          b_blocks.push_back(std::move(b));
        }
        const double residual = als_residual(a_blocks, b_blocks, 30);
        if (residual < best) {
          best = residual;
          best_a = a_blocks;
          best_b = b_blocks;
        }
      }
    }
    for (int t = 0; t < r; ++t) {
      model.base.terms[static_cast<std::size_t>(t)].A = best_a[static_cast<std::size_t>(t)];
      model.base.terms[static_cast<std::size_t>(t)].B = best_b[static_cast<std::size_t>(t)];
    }
  }
  model.validate();
  return model;
}

// Single-tensor starting point for any of the four model shapes. CPD/LL1
// cores stay frozen at the canonical identity; their per-term scale is
// calibrated by one joint least-squares solve over the term contributions.
inline LmnModel initialize_kind(ModelKind kind, const Tensor3& y,
                                const std::vector<std::array<int, 3>>& ranks,
                                std::uint64_t seed) {
  const std::array<int, 3> dims = y.dims();
  check_rank_spec(kind, dims, ranks);
  if (kind == ModelKind::kLmn || kind == ModelKind::kTucker)
    return initialize(y, y, dims, ranks, seed, nullptr);

  const int r = static_cast<int>(ranks.size());
  const detail::GevdBases bases = detail::spatial_bases(y, ranks, seed);
  std::vector<int> ns;
  for (const auto& rk : ranks) ns.push_back(rk[2]);
  const std::vector<Matrix> c_parts = detail::spectral_bases(unfold(y, 3), ns, r);

  LmnModel model;
  model.dims = dims;
  for (int t = 0; t < r; ++t) {
    LmnTerm term;
    term.A = bases.a_parts[static_cast<std::size_t>(t)];
    term.B = bases.b_parts[static_cast<std::size_t>(t)];
    term.C = c_parts[static_cast<std::size_t>(t)];
    const auto [l, m, n] = ranks[static_cast<std::size_t>(t)];
    term.core = Tensor3(l, m, n);
    for (int d = 0; d < l; ++d) term.core(d, kind == ModelKind::kCpd ? 0 : d, 0) = 1.0;
    term.core_frozen = true;
    model.terms.push_back(std::move(term));
  }
  // Per-term scale via <Y, T_r> Gram solve, absorbed into C.
  std::vector<Tensor3> contribs;
  for (int t = 0; t < r; ++t) contribs.push_back(reconstruct_term(model, t));
  Matrix gram(r, r);
  Vector rhs(r);
  for (int s = 0; s < r; ++s) {
    const Eigen::Map<const Vector> vs(contribs[static_cast<std::size_t>(s)].data(),
                                      static_cast<Eigen::Index>(contribs[static_cast<std::size_t>(s)].size()));
    rhs(s) = vs.dot(Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size())));
    for (int t = 0; t < r; ++t)
      gram(s, t) = vs.dot(Eigen::Map<const Vector>(contribs[static_cast<std::size_t>(t)].data(),
                                                   static_cast<Eigen::Index>(contribs[static_cast<std::size_t>(t)].size())));
  }
  gram.diagonal().array() += 1e-12 * std::max(1.0, gram.trace() / r);
  const Vector coeff = gram.ldlt().solve(rhs);
  if (coeff.allFinite())
    for (int t = 0; t < r; ++t) model.terms[static_cast<std::size_t>(t)].C *= coeff(t);
  model.validate();
  return model;
}

// Adds elementwise Gaussian noise of standard deviation rel * rms(X) to
// every trainable factor.
inline LmnModel perturb_model(const LmnModel& model, double rel, std::uint64_t seed) {
  LmnModel out = model;
  std::uint64_t which = 0;
  auto jiggle = [&](double* data, std::size_t n) {
    double rms = 0.0;
    for (std::size_t i = 0; i < n; ++i) rms += data[i] * data[i];
    rms = std::sqrt(rms / static_cast<double>(n));
    const std::uint64_t stream = rng::stream_id("perturb", which++);
    for (std::size_t i = 0; i < n; ++i)
      data[i] += rel * rms * rng::normal_at(seed, stream, i);
  };
  for (LmnTerm& t : out.terms) {
    jiggle(t.A.data(), static_cast<std::size_t>(t.A.size()));
    jiggle(t.B.data(), static_cast<std::size_t>(t.B.size()));
    jiggle(t.C.data(), static_cast<std::size_t>(t.C.size()));
    if (!t.core_frozen) jiggle(t.core.data(), t.core.size());
  }
  return out;
}

inline SemiBlindModel perturb_model(const SemiBlindModel& model, double rel, std::uint64_t seed) {
  SemiBlindModel out;
  out.base = perturb_model(model.base, rel, seed);
  out.hsi_terms = model.hsi_terms;
  std::uint64_t which = 0;
  auto jiggle = [&](Matrix& m) {
    const double rms = std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
    const std::uint64_t stream = rng::stream_id("perturb_tilde", which++);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] += rel * rms * rng::normal_at(seed, stream, static_cast<std::uint64_t>(i));
  };
  for (auto& tf : out.hsi_terms) {
    jiggle(tf.Atilde);
    jiggle(tf.Btilde);
  }
  return out;
}

}  // namespace btdfuse
