#pragma once

#include <cmath>
#include <stdexcept>

#include "btdfuse/model.hpp"
#include "btdfuse/tensor.hpp"

namespace btdfuse {

struct RegConfig {
  double lambda = 0.0;
  double eta = 0.0;
  double p = 0.5;
  double epsilon = 0.01;

  void validate() const {
    if (lambda < 0 || eta < 0) throw std::invalid_argument("RegConfig: lambda/eta must be >= 0");
    if (p <= 0 || p > 1) throw std::invalid_argument("RegConfig: p must be in (0, 1]");
    if (epsilon <= 0) throw std::invalid_argument("RegConfig: epsilon must be > 0");
  }
};

// First-difference matrix, (n-1) x n: rows [1, -1].
inline Matrix build_H1(int n) {
  if (n < 2) throw std::invalid_argument("build_H1: n must be >= 2");
  Matrix h = Matrix::Zero(n - 1, n);
  for (int i = 0; i < n - 1; ++i) {
    h(i, i) = 1.0;
    h(i, i + 1) = -1.0;
  }
  return h;
}

inline Matrix build_H2(int n) { return build_H1(n); }

// Second-difference matrix, (k-2) x k: rows [1, -2, 1].
inline Matrix build_H3(int k) {
  if (k < 3) throw std::invalid_argument("build_H3: K must be >= 3");
  Matrix h = Matrix::Zero(k - 2, k);
  for (int i = 0; i < k - 2; ++i) {
    h(i, i) = 1.0;
    h(i, i + 1) = -2.0;
    h(i, i + 2) = 1.0;
  }
  return h;
}

// sum_ij (x_ij^2 + eps)^(p/2)
inline double phi_p_eps(const Matrix& x, double p, double epsilon) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      acc += std::pow(x(i, j) * x(i, j) + epsilon, 0.5 * p);
  return acc;
}

// Weights of the quadratic surrogate built at x_t:
//   w_i = (p/2) (x_i^2 + eps)^((p-2)/2),
// so  phi(x) <= sum_i w_i x_i^2 + const, with equality and matching
// gradient at x = x_t.
inline Matrix majorizer_weights(const Matrix& x_t, double p, double epsilon) {
  Matrix w(x_t.rows(), x_t.cols());
  for (Eigen::Index j = 0; j < x_t.cols(); ++j)
    for (Eigen::Index i = 0; i < x_t.rows(); ++i)
      w(i, j) = 0.5 * p * std::pow(x_t(i, j) * x_t(i, j) + epsilon, 0.5 * (p - 2.0));
  return w;
}

// Value of that surrogate at x.
inline double majorizer_value(const Matrix& x, const Matrix& x_t, double p, double epsilon) {
  const Matrix w = majorizer_weights(x_t, p, epsilon);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double xt2 = x_t(i, j) * x_t(i, j);
      const double touch = std::pow(xt2 + epsilon, 0.5 * p);
      acc += w(i, j) * (x(i, j) * x(i, j) - xt2) + touch;
    }
  return acc;
}

// ||H3 C||_F^2
inline double tikhonov(const Matrix& c, const Matrix& h3) {
  if (h3.cols() != c.rows()) throw std::invalid_argument("tikhonov: dims do not agree");
  return (h3 * c).squaredNorm();
}

// (1/2) sum_r ||D_r||_F^2 over the trainable cores.
inline double core_penalty(const LmnModel& model) {
  double acc = 0.0;
  for (const LmnTerm& t : model.terms) {
    if (t.core_frozen) continue;
    acc += 0.5 * squared_norm(t.core);
  }
  return acc;
}

// The smoothness penalty on a factor: phi_{p,eps}(H * A). Its surrogate at
// the current iterate is the quadratic sum_i w_i (HA)_i^2 + const with w
// from majorizer_weights; gradient and curvature below use those weights.
inline double smoothness_penalty(const Matrix& a, const Matrix& h, double p, double epsilon) {
  return phi_p_eps(h * a, p, epsilon);
}

// Gradient of the surrogate at its build point (= gradient of phi there):
// 2 H^T (W .* (H a)).
inline Matrix smoothness_gradient(const Matrix& ha, const Matrix& w, const Matrix& h) {
  return 2.0 * (h.transpose() * w.cwiseProduct(ha));
}

// Largest curvature of the surrogate. The weights decouple column-by-column
// of A, so the exact value is max over columns of lmax(2 H^T diag(w_col) H).
inline double smoothness_curvature_exact(const Matrix& w, const Matrix& h) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const Matrix m = h.transpose() * w.col(j).asDiagonal() * h;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
    worst = std::max(worst, eig.eigenvalues().maxCoeff());
  }
  return 2.0 * worst;
}

// Cheap bound 2 * sigma_max(H)^2 * max_i w_i; sigma_h passed in precomputed.
inline double smoothness_curvature_bound(const Matrix& w, double sigma_h) {
  return 2.0 * sigma_h * sigma_h * w.maxCoeff();
}

}  // namespace btdfuse
