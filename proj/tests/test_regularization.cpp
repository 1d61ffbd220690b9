#include "btdfuse/regularization.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace btdfuse;

TEST(DifferenceOps, H1Pattern) {
  const Matrix h2 = build_H1(2);
  ASSERT_EQ(h2.rows(), 1);
  EXPECT_EQ(h2(0, 0), 1.0);
  EXPECT_EQ(h2(0, 1), -1.0);
  const Matrix h3 = build_H1(3);
  Matrix want(2, 3);
  want << 1, -1, 0, 0, 1, -1;
  EXPECT_EQ(h3, want);
  EXPECT_THROW(build_H1(1), std::invalid_argument);
}

TEST(DifferenceOps, H1AnnihilatesConstants) {
  const Matrix h = build_H1(6);
  const Vector c = Vector::Constant(6, 3.25);
  EXPECT_LT((h * c).norm(), 1e-15);
}

TEST(DifferenceOps, H3Pattern) {
  const Matrix h5 = build_H3(5);
  Matrix want(3, 5);
  want << 1, -2, 1, 0, 0, 0, 1, -2, 1, 0, 0, 0, 1, -2, 1;
  EXPECT_EQ(h5, want);
  const Matrix h3 = build_H3(3);
  ASSERT_EQ(h3.rows(), 1);
  EXPECT_EQ(h3(0, 1), -2.0);
  EXPECT_THROW(build_H3(2), std::invalid_argument);
}

TEST(DifferenceOps, H3AnnihilatesAffine) {
  const Matrix h = build_H3(7);
  Vector affine(7);
  for (int t = 0; t < 7; ++t) affine(t) = 1.5 + 0.25 * t;
  EXPECT_LT((h * affine).norm(), 1e-13);
}

TEST(PhiPEps, ClosedFormZeroMatrix) {
  const Matrix x = Matrix::Zero(2, 2);
  EXPECT_NEAR(phi_p_eps(x, 0.5, 0.01), 4.0 * std::pow(0.01, 0.25), 1e-7);
  EXPECT_NEAR(phi_p_eps(x, 0.5, 0.01), 1.2649111, 1e-7);
}

TEST(PhiPEps, PEqualOneApproachesAbs) {
  Matrix x(1, 1);
  x << 1.0;
  EXPECT_NEAR(phi_p_eps(x, 1.0, 1e-12), 1.0, 1e-6);
}

TEST(PhiPEps, LoopOracleAndSignInvariance) {
  std::mt19937_64 gen(3);
  const Matrix x = oracles::random_matrix(3, 3, gen);
  double want = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) want += std::pow(x(i, j) * x(i, j) + 0.01, 0.25);
  EXPECT_NEAR(phi_p_eps(x, 0.5, 0.01), want, 1e-12);
  EXPECT_NEAR(phi_p_eps(Matrix(-x), 0.5, 0.01), want, 1e-12);
}

TEST(Majorizer, WeightsFormula) {
  const Matrix w = majorizer_weights(Matrix::Zero(3, 1), 0.5, 0.01);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(w(i, 0), 0.25 * std::pow(0.01, -0.75), 1e-9);
  EXPECT_NEAR(w(0, 0), 7.9057, 1e-3);
}

TEST(Majorizer, DominanceAlongRandomRays) {
  std::mt19937_64 gen(5);
  for (double p : {0.5, 1.0}) {
    for (double eps : {1e-2, 1e-4}) {
      const Matrix x_t = oracles::random_matrix(4, 2, gen);
      for (int ray = 0; ray < 25; ++ray) {
        const Matrix dir = oracles::random_matrix(4, 2, gen);
        const double step = std::pow(10.0, -3.0 + 0.25 * ray);
        const Matrix x = x_t + step * dir;
        EXPECT_GE(majorizer_value(x, x_t, p, eps) - phi_p_eps(x, p, eps), -1e-10);
      }
      EXPECT_NEAR(majorizer_value(x_t, x_t, p, eps), phi_p_eps(x_t, p, eps), 1e-12);
    }
  }
}

TEST(Majorizer, GradientTangencyByFiniteDifferences) {
  std::mt19937_64 gen(7);
  for (double p : {0.5, 1.0}) {
    for (double eps : {1e-2, 1e-4}) {
      const Matrix x_t = oracles::random_matrix(3, 2, gen);
      const Matrix w = majorizer_weights(x_t, p, eps);
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
          const double h = 1e-7 * (1.0 + std::abs(x_t(i, j)));
          Matrix plus = x_t, minus = x_t;
          plus(i, j) += h;
          minus(i, j) -= h;
          const double fd = (phi_p_eps(plus, p, eps) - phi_p_eps(minus, p, eps)) / (2 * h);
          const double analytic = 2.0 * w(i, j) * x_t(i, j);  // surrogate gradient
          EXPECT_NEAR(fd, analytic, 1e-8 * (1.0 + std::abs(analytic)));
        }
      }
    }
  }
}

TEST(Tikhonov, AffineColumnsVanish) {
  const Matrix h3 = build_H3(6);
  Matrix c(6, 2);
  for (int t = 0; t < 6; ++t) {
    c(t, 0) = 2.0 + 0.5 * t;
    c(t, 1) = -1.0 + 0.1 * t;
  }
  EXPECT_LT(tikhonov(c, h3), 1e-24);
}

TEST(Tikhonov, BasisColumnAndComposition) {
  const Matrix h3 = build_H3(3);
  Matrix c = Matrix::Zero(3, 1);
  c(0, 0) = 1.0;
  EXPECT_NEAR(tikhonov(c, h3), 1.0, 1e-15);
  std::mt19937_64 gen(11);
  const Matrix r = oracles::random_matrix(7, 3, gen);
  const Matrix h7 = build_H3(7);
  EXPECT_NEAR(tikhonov(r, h7), (h7 * r).squaredNorm(), 1e-12);
  EXPECT_THROW(tikhonov(r, h3), std::invalid_argument);
}

TEST(CorePenalty, ZeroAndAllOnes) {
  LmnModel model;
  model.dims = {2, 2, 2};
  LmnTerm t;
  t.A = Matrix::Identity(2, 2);
  t.B = Matrix::Identity(2, 2);
  t.C = Matrix::Identity(2, 2);
  t.core = Tensor3(2, 2, 2);
  model.terms.push_back(t);
  EXPECT_EQ(core_penalty(model), 0.0);
  for (std::size_t n = 0; n < model.terms[0].core.size(); ++n)
    model.terms[0].core.data()[n] = 1.0;
  EXPECT_NEAR(core_penalty(model), 4.0, 1e-15);
  model.terms[0].core_frozen = true;
  EXPECT_EQ(core_penalty(model), 0.0);
}

TEST(CorePenalty, LoopOracle) {
  std::mt19937_64 gen(13);
  LmnModel model;
  model.dims = {4, 4, 4};
  for (int r = 0; r < 2; ++r) {
    LmnTerm t;
    t.A = oracles::random_matrix(4, 2, gen);
    t.B = oracles::random_matrix(4, 2, gen);
    t.C = oracles::random_matrix(4, 2, gen);
    t.core = oracles::random_tensor(2, 2, 2, gen);
    model.terms.push_back(std::move(t));
  }
  double want = 0.0;
  for (const auto& t : model.terms)
    for (std::size_t n = 0; n < t.core.size(); ++n)
      want += 0.5 * t.core.data()[n] * t.core.data()[n];
  EXPECT_NEAR(core_penalty(model), want, 1e-12);
}

// The matrix-free smoothness gradient must agree with the dense Kronecker
// form (I_L kron H)^T W (I_L kron H) vec(A) it stands in for.
TEST(Smoothness, MatrixFreeMatchesDenseKroneckerOracle) {
  std::mt19937_64 gen(17);
  const int I = 6, L = 3;
  const Matrix a = oracles::random_matrix(I, L, gen);
  const Matrix h = build_H1(I);
  const double p = 0.5, eps = 0.01;
  const Matrix ha = h * a;
  const Matrix w = majorizer_weights(ha, p, eps);
  const Matrix got = smoothness_gradient(ha, w, h);

  const Matrix h_tilde = kron(Matrix::Identity(L, L), h);  // acts on column-major vec(A)
  const Vector a_vec = Eigen::Map<const Vector>(a.data(), a.size());
  const Vector w_vec = Eigen::Map<const Vector>(w.data(), w.size());
  const Vector dense = 2.0 * h_tilde.transpose() * w_vec.asDiagonal() * (h_tilde * a_vec);
  EXPECT_LT((Eigen::Map<const Vector>(got.data(), got.size()) - dense).norm(),
            1e-12 * std::max(1.0, dense.norm()));
}

TEST(Smoothness, CurvatureBoundDominatesExact) {
  std::mt19937_64 gen(19);
  const Matrix h = build_H1(7);
  const double sigma_h = singular_values(h)(0);
  for (int rep = 0; rep < 100; ++rep) {
    const Matrix a = oracles::random_matrix(7, 2, gen);
    const Matrix w = majorizer_weights(h * a, 0.5, 0.01);
    const double exact = smoothness_curvature_exact(w, h);
    const double bound = smoothness_curvature_bound(w, sigma_h);
    EXPECT_GE(bound, exact - 1e-10 * bound);
  }
}

TEST(RegConfig, Validation) {
  RegConfig ok;
  ok.validate();
  RegConfig bad = ok;
  bad.p = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.epsilon = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.lambda = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
