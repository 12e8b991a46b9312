#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace kao {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-major design: row t holds X_t.
using Design = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when array shapes disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical invariant breaks mid-computation (non-finite
/// log-likelihood, non-positive innovation variance, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

inline void require_dim(std::ptrdiff_t got, std::ptrdiff_t want, const std::string& what) {
  if (got != want) {
    throw DimensionError(what + ": expected dimension " + std::to_string(want) + ", got " +
                         std::to_string(got));
  }
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Max |A - A^T| entry.
inline double asymmetry(const Matrix& a) { return (a - a.transpose()).cwiseAbs().maxCoeff(); }

inline double min_eigenvalue(const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_psd(const Matrix& a, double tol) {
  return a.rows() == a.cols() && asymmetry(a) <= tol && min_eigenvalue(a) >= -tol;
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Symmetric square root B with B B^T = A; negative eigenvalues above -tol are clamped to 0.
inline Matrix psd_sqrt(const Matrix& a, double tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(a));
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) throw std::invalid_argument("psd_sqrt: matrix is not positive semidefinite");
    ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Integer power of a square matrix (exponent >= 0).
inline Matrix matrix_power(const Matrix& k, std::size_t n) {
  Matrix result = Matrix::Identity(k.rows(), k.cols());
  Matrix base = k;
  while (n > 0) {
    if (n & 1U) result = result * base;
    base = base * base;
    n >>= 1U;
  }
  return result;
}

}  // namespace kao
