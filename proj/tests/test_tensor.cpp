#include "btdfuse/tensor.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace btdfuse;

TEST(Unfold, DegenerateSingleEntry) {
  Tensor3 t(1, 1, 1);
  t(0, 0, 0) = 5.0;
  const Matrix m = unfold(t, 1);
  ASSERT_EQ(m.rows(), 1);
  ASSERT_EQ(m.cols(), 1);
  EXPECT_EQ(m(0, 0), 5.0);
}

TEST(Unfold, ConstantTensorMode2) {
  Tensor3 t(2, 2, 2);
  for (std::size_t n = 0; n < t.size(); ++n) t.data()[n] = 1.0;
  const Matrix m = unfold(t, 2);
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 4);
  EXPECT_TRUE((m.array() == 1.0).all());
}

TEST(Unfold, Mode3IndexMap) {
  std::mt19937_64 gen(7);
  const Tensor3 t = oracles::random_tensor(3, 4, 5, gen);
  const Matrix m = unfold(t, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 5; ++k) EXPECT_EQ(m(k, i + 3 * j), t(i, j, k));
}

TEST(Unfold, MatchesLoopOracleAllModes) {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor3 t = oracles::random_tensor(2 + rep % 5, 3 + rep % 4, 2 + rep % 6, gen);
    for (int mode = 1; mode <= 3; ++mode)
      EXPECT_EQ(unfold(t, mode), oracles::unfold_loop(t, mode));
  }
}

TEST(Unfold, InvalidModeThrows) {
  Tensor3 t(2, 2, 2);
  EXPECT_THROW(unfold(t, 0), std::invalid_argument);
  EXPECT_THROW(unfold(t, 4), std::invalid_argument);
}

TEST(Fold, RoundtripBitwise) {
  std::mt19937_64 gen(13);
  for (int rep = 0; rep < 30; ++rep) {
    const Tensor3 t = oracles::random_tensor(1 + rep % 8, 1 + (rep * 3) % 7, 1 + (rep * 5) % 6, gen);
    for (int mode = 1; mode <= 3; ++mode) {
      const Tensor3 back = fold(unfold(t, mode), mode, t.dims());
      ASSERT_EQ(back.dims(), t.dims());
      for (std::size_t n = 0; n < t.size(); ++n)
        ASSERT_EQ(back.data()[n], t.data()[n]);  // bitwise
    }
  }
}

TEST(Fold, ScalarCase) {
  Matrix m(1, 1);
  m(0, 0) = 7.0;
  const Tensor3 t = fold(m, 3, {1, 1, 1});
  EXPECT_EQ(t(0, 0, 0), 7.0);
}

TEST(Fold, DimensionMismatchThrows) {
  Matrix m(2, 3);
  EXPECT_THROW(fold(m, 1, {3, 2, 1}), std::invalid_argument);
  EXPECT_THROW(fold(m, 2, {2, 3, 2}), std::invalid_argument);
}

TEST(ModeProduct, IdentityLeavesTensor) {
  std::mt19937_64 gen(17);
  const Tensor3 t = oracles::random_tensor(4, 3, 5, gen);
  const Tensor3 got = mode_product(t, Matrix::Identity(4, 4), 1);
  EXPECT_LT(oracles::rel_err(got, t), 1e-15);
}

TEST(ModeProduct, ScaledIdentityMode3) {
  Tensor3 t(2, 2, 2);
  for (std::size_t n = 0; n < t.size(); ++n) t.data()[n] = 1.0;
  Matrix u(2, 2);
  u << 2, 0, 0, 2;
  const Tensor3 got = mode_product(t, u, 3);
  for (std::size_t n = 0; n < got.size(); ++n) EXPECT_DOUBLE_EQ(got.data()[n], 2.0);
}

TEST(ModeProduct, MatchesLoopOracle) {
  std::mt19937_64 gen(19);
  const Tensor3 t = oracles::random_tensor(3, 3, 3, gen);
  const Matrix u = oracles::random_matrix(2, 3, gen);
  const Tensor3 got = mode_product(t, u, 2);
  const Tensor3 want = oracles::mode_product_loop(t, u, 2);
  EXPECT_LT(oracles::rel_err(got, want), 1e-13);
}

TEST(ModeProduct, UnfoldingIdentity) {
  std::mt19937_64 gen(23);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor3 t = oracles::random_tensor(4, 5, 3, gen);
    for (int mode = 1; mode <= 3; ++mode) {
      const Matrix u = oracles::random_matrix(2 + rep % 4, t.dim(mode - 1), gen);
      const Matrix lhs = unfold(mode_product(t, u, mode), mode);
      const Matrix rhs = u * unfold(t, mode);
      EXPECT_LT(oracles::rel_err(lhs, rhs), 1e-12);
    }
  }
}

TEST(ModeProduct, SpatialCommutation) {
  std::mt19937_64 gen(29);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor3 t = oracles::random_tensor(6, 5, 4, gen);
    const Matrix u = oracles::random_matrix(3, 6, gen);
    const Matrix v = oracles::random_matrix(2, 5, gen);
    const Tensor3 a = mode_product(mode_product(t, u, 1), v, 2);
    const Tensor3 b = mode_product(mode_product(t, v, 2), u, 1);
    EXPECT_LT(oracles::rel_err(a, b), 1e-12);
  }
}

TEST(ModeProduct, DimMismatchThrows) {
  Tensor3 t(2, 3, 4);
  EXPECT_THROW(mode_product(t, Matrix::Identity(3, 3), 1), std::invalid_argument);
}

TEST(Kron, Identities) {
  const Matrix k = kron(Matrix::Identity(2, 2), Matrix::Identity(3, 3));
  EXPECT_LT((k - Matrix::Identity(6, 6)).norm(), 1e-15);
}

TEST(Kron, HandExpansion) {
  Matrix a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  Matrix want(2, 2);
  want << 3, 6, 4, 8;
  EXPECT_EQ(kron(a, b), want);
}

TEST(Kron, ScalarCase) {
  std::mt19937_64 gen(31);
  const Matrix a = oracles::random_matrix(3, 4, gen);
  Matrix c(1, 1);
  c << -2.5;
  EXPECT_LT(oracles::rel_err(Matrix(kron(a, c)), Matrix(-2.5 * a)), 1e-15);
}

TEST(Kron, SigmaMaxMultiplicative) {
  std::mt19937_64 gen(37);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix a = oracles::random_matrix(3, 3, gen);
    const Matrix b = oracles::random_matrix(3, 3, gen);
    const double lhs = sigma_max(kron(a, b));
    const double rhs = sigma_max(a) * sigma_max(b);
    EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, rhs));
  }
}

TEST(Frobenius, ZeroTensor) { EXPECT_EQ(frobenius_norm(Tensor3(3, 3, 3)), 0.0); }

TEST(Frobenius, AllOnes) {
  Tensor3 t(2, 2, 2);
  for (std::size_t n = 0; n < t.size(); ++n) t.data()[n] = 1.0;
  EXPECT_NEAR(frobenius_norm(t), std::sqrt(8.0), 1e-12);
}

TEST(Frobenius, MatchesLoopOracle) {
  std::mt19937_64 gen(41);
  const Tensor3 t = oracles::random_tensor(5, 4, 6, gen);
  EXPECT_NEAR(frobenius_norm(t), oracles::frobenius_loop(t), 1e-12);
}

TEST(SingularValues, Identity) {
  const Vector s = singular_values(Matrix::Identity(3, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s(i), 1.0, 1e-14);
}

TEST(SingularValues, RankOneOuterProduct) {
  Vector a(3), b(4);
  a << 1, -2, 2;
  b << 0.5, 1, 0, -1;
  const Matrix m = a * b.transpose();
  const Vector s = singular_values(m);
  EXPECT_NEAR(s(0), a.norm() * b.norm(), 1e-12);
  for (int i = 1; i < s.size(); ++i) EXPECT_NEAR(s(i), 0.0, 1e-12);
}

TEST(SingularValues, GramOracle) {
  std::mt19937_64 gen(43);
  const Matrix m = oracles::random_matrix(4, 6, gen);
  const Vector s = singular_values(m);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m * m.transpose());
  Vector want = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  std::sort(want.data(), want.data() + want.size(), std::greater<double>());
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(s(i), want(i), 1e-9);
}

TEST(SingularValues, Descending) {
  std::mt19937_64 gen(47);
  const Vector s = singular_values(oracles::random_matrix(6, 5, gen));
  for (int i = 1; i < s.size(); ++i) EXPECT_GE(s(i - 1), s(i));
}

TEST(TopTriplets, ReconstructsLowRank) {
  std::mt19937_64 gen(53);
  const Matrix a = oracles::random_matrix(6, 2, gen);
  const Matrix b = oracles::random_matrix(2, 7, gen);
  const Matrix m = a * b;
  const SvdTriplets t = top_singular_triplets(m, 2);
  const Matrix back = t.u * t.sigma.asDiagonal() * t.v.transpose();
  EXPECT_LT(oracles::rel_err(back, m), 1e-10);
  EXPECT_THROW(top_singular_triplets(m, 9), std::invalid_argument);
}

TEST(Tensor3, InvariantChecks) {
  EXPECT_THROW(Tensor3(0, 1, 1), std::invalid_argument);
  EXPECT_THROW(Tensor3(2, 2, 2, std::vector<double>(7, 0.0)), std::invalid_argument);
  Tensor3 t(2, 2, 2);
  EXPECT_TRUE(t.all_finite());
  t(1, 1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}
