#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <unsupported/Eigen/KroneckerProduct>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace btdfuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Dense third-order tensor, double precision. Element (i,j,k) lives at
// linear index i + I*j + I*J*k, so the flat buffer coincides with the
// column-major mode-1 unfolding.
class Tensor3 {
 public:
  Tensor3() = default;

  Tensor3(int i, int j, int k) : dims_{i, j, k}, data_(numel_checked(i, j, k), 0.0) {}

  Tensor3(int i, int j, int k, std::vector<double> values)
      : dims_{i, j, k}, data_(std::move(values)) {
    if (data_.size() != numel_checked(i, j, k))
      throw std::invalid_argument("Tensor3: data length does not match dims");
  }

  int dim(int axis) const { return dims_[axis]; }
  const std::array<int, 3>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int i, int j, int k) {
    return data_[static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) * (j + static_cast<std::size_t>(dims_[1]) * k)];
  }
  double operator()(int i, int j, int k) const {
    return data_[static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) * (j + static_cast<std::size_t>(dims_[1]) * k)];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_dims(const Tensor3& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static std::size_t numel_checked(int i, int j, int k) {
    if (i <= 0 || j <= 0 || k <= 0)
      throw std::invalid_argument("Tensor3: dims must be positive");
    return static_cast<std::size_t>(i) * j * k;
  }

  std::array<int, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

inline Tensor3 operator+(const Tensor3& a, const Tensor3& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("Tensor3 +: dims mismatch");
  Tensor3 out = a;
  for (std::size_t n = 0; n < out.size(); ++n) out.data()[n] += b.data()[n];
  return out;
}

inline Tensor3 operator-(const Tensor3& a, const Tensor3& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("Tensor3 -: dims mismatch");
  Tensor3 out = a;
  for (std::size_t n = 0; n < out.size(); ++n) out.data()[n] -= b.data()[n];
  return out;
}

inline Tensor3 operator*(double s, const Tensor3& t) {
  Tensor3 out = t;
  for (std::size_t n = 0; n < out.size(); ++n) out.data()[n] *= s;
  return out;
}

// Mode-n unfolding with mode-n fibers as columns. Columns are ordered with
// the earlier-numbered remaining mode varying fastest:
//   mode 1: M(i, j + J*k), mode 2: M(j, i + I*k), mode 3: M(k, i + I*j).
inline Matrix unfold(const Tensor3& t, int mode) {
  const int I = t.dim(0), J = t.dim(1), K = t.dim(2);
  switch (mode) {
    case 1:
      return Eigen::Map<const Matrix>(t.data(), I, static_cast<Eigen::Index>(J) * K);
    case 2: {
      Matrix m(J, static_cast<Eigen::Index>(I) * K);
      for (int k = 0; k < K; ++k)
        m.middleCols(static_cast<Eigen::Index>(k) * I, I) =
            Eigen::Map<const Matrix>(t.data() + static_cast<std::size_t>(k) * I * J, I, J).transpose();
      return m;
    }
    case 3:
      return Eigen::Map<const Matrix>(t.data(), static_cast<Eigen::Index>(I) * J, K).transpose();
    default:
      throw std::invalid_argument("unfold: mode must be 1, 2, or 3");
  }
}

inline Tensor3 fold(const Matrix& m, int mode, const std::array<int, 3>& dims) {
  const int I = dims[0], J = dims[1], K = dims[2];
  const Eigen::Index rows[4] = {0, I, J, K};
  if (mode < 1 || mode > 3) throw std::invalid_argument("fold: mode must be 1, 2, or 3");
  if (m.rows() != rows[mode] ||
      m.cols() != static_cast<Eigen::Index>(I) * J * K / rows[mode])
    throw std::invalid_argument("fold: matrix shape inconsistent with dims");
  Tensor3 t(I, J, K);
  switch (mode) {
    case 1:
      Eigen::Map<Matrix>(t.data(), I, static_cast<Eigen::Index>(J) * K) = m;
      break;
    case 2:
      for (int k = 0; k < K; ++k)
        Eigen::Map<Matrix>(t.data() + static_cast<std::size_t>(k) * I * J, I, J) =
            m.middleCols(static_cast<Eigen::Index>(k) * I, I).transpose();
      break;
    case 3:
      Eigen::Map<Matrix>(t.data(), static_cast<Eigen::Index>(I) * J, K) = m.transpose();
      break;
  }
  return t;
}

// X x_n U: contracts mode n of the tensor with the columns of U.
inline Tensor3 mode_product(const Tensor3& t, const Matrix& u, int mode) {
  if (mode < 1 || mode > 3) throw std::invalid_argument("mode_product: mode must be 1, 2, or 3");
  if (u.cols() != t.dim(mode - 1))
    throw std::invalid_argument("mode_product: u.cols() != dims[mode]");
  std::array<int, 3> out_dims = t.dims();
  out_dims[mode - 1] = static_cast<int>(u.rows());
  return fold(u * unfold(t, mode), mode, out_dims);
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  return Eigen::kroneckerProduct(a, b);
}

inline double frobenius_norm(const Tensor3& t) {
  return Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size())).norm();
}

inline double frobenius_norm(const Matrix& m) { return m.norm(); }

inline double squared_norm(const Tensor3& t) {
  return Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size())).squaredNorm();
}

// Singular values in nonincreasing order.
inline Vector singular_values(const Matrix& m) {
  Eigen::BDCSVD<Matrix> svd(m);
  if (svd.info() != Eigen::Success)
    throw std::runtime_error("singular_values: SVD did not converge within " +
                             std::to_string(m.rows() + m.cols()) + " implicit QR sweeps");
  return svd.singularValues();
}

inline double sigma_max(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  return singular_values(m)(0);
}

struct SvdTriplets {
  Matrix u;        // leading left singular vectors, one per column
  Vector sigma;    // matching singular values
  Matrix v;        // matching right singular vectors
};

// Top-k singular triplets of m, k <= min(rows, cols).
inline SvdTriplets top_singular_triplets(const Matrix& m, int k) {
  if (k < 1 || k > std::min(m.rows(), m.cols()))
    throw std::invalid_argument("top_singular_triplets: k out of range");
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw std::runtime_error("top_singular_triplets: SVD did not converge within " +
                             std::to_string(m.rows() + m.cols()) + " implicit QR sweeps");
  SvdTriplets out;
  out.u = svd.matrixU().leftCols(k);
  out.sigma = svd.singularValues().head(k);
  out.v = svd.matrixV().leftCols(k);
  return out;
}

}  // namespace btdfuse
