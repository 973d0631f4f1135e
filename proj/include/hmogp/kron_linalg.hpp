#pragma once

// Dense linear algebra and Kronecker-product identities.
//
// Conventions used throughout the library:
//   * vec(X) stacks the columns of X (Eigen's default column-major layout),
//     so a vector of length p*q maps onto a p x q matrix through Eigen::Map.
//   * kron(A, B) has block (i, j) equal to A(i, j) * B.
//
// Everything here is a pure function of its arguments.

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "hmogp/errors.hpp"

namespace hmogp {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Lower Cholesky factor of (A + jitter_used * I).
template <typename Scalar = double>
struct CholeskyFactor {
  MatrixX<Scalar> lower;
  Scalar jitter_used{0};

  Index size() const { return lower.rows(); }
};

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> kron(const Eigen::MatrixBase<DerivedA>& a,
                                        const Eigen::MatrixBase<DerivedB>& b) {
  const Index br = b.rows();
  const Index bc = b.cols();
  MatrixX<typename DerivedA::Scalar> out(a.rows() * br, a.cols() * bc);
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      out.block(i * br, j * bc, br, bc) = a(i, j) * b;
    }
  }
  return out;
}

/// (a kron b) * x without forming the Kronecker product: vec(b * X * a^T),
/// where X is the b.cols() x a.cols() column-stacked reshaping of x.
template <typename DerivedA, typename DerivedB, typename DerivedX>
VectorX<typename DerivedA::Scalar> kron_matvec(const Eigen::MatrixBase<DerivedA>& a,
                                               const Eigen::MatrixBase<DerivedB>& b,
                                               const Eigen::MatrixBase<DerivedX>& x) {
  using Scalar = typename DerivedA::Scalar;
  if (x.size() != a.cols() * b.cols()) {
    throw DimensionError("kron_matvec: vector length " + std::to_string(x.size()) +
                         " does not match " + std::to_string(a.cols() * b.cols()));
  }
  const VectorX<Scalar> xv = x;
  Eigen::Map<const MatrixX<Scalar>> xm(xv.data(), b.cols(), a.cols());
  const MatrixX<Scalar> prod = b * xm * a.transpose();
  return Eigen::Map<const VectorX<Scalar>>(prod.data(), prod.size());
}

/// Tr(a kron b) = Tr(a) * Tr(b).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar trace_kron(const Eigen::MatrixBase<DerivedA>& a,
                                     const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != a.cols() || b.rows() != b.cols()) {
    throw DimensionError("trace_kron: both factors must be square");
  }
  return a.trace() * b.trace();
}

inline constexpr double kDefaultBaseJitter = 1e-6;
inline constexpr int kMaxJitterEscalations = 6;

/// Cholesky factor of a + j*I for the smallest j in
/// {0, base*mean_diag*10^k : k = 0..6} that factorizes.
template <typename Derived>
CholeskyFactor<typename Derived::Scalar> cholesky_jitter(const Eigen::MatrixBase<Derived>& a,
                                                         double base_jitter = kDefaultBaseJitter) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) {
    throw DimensionError("cholesky_jitter: matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()));
  }
  const Index n = a.rows();
  MatrixX<Scalar> work = a;
  if (n == 0) return {work, Scalar(0)};
  if (!work.allFinite()) throw IndefiniteMatrixError("cholesky_jitter: non-finite entries");

  Scalar mean_diag = work.diagonal().mean();
  if (!(mean_diag > Scalar(0))) mean_diag = Scalar(1);

  Scalar jitter(0);
  for (int attempt = -1; attempt <= kMaxJitterEscalations; ++attempt) {
    if (attempt >= 0) jitter = base_jitter * mean_diag * std::pow(10.0, attempt);
    MatrixX<Scalar> shifted = work;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<MatrixX<Scalar>> llt(shifted);
    if (llt.info() == Eigen::Success) {
      MatrixX<Scalar> lower = llt.matrixL();
      if ((lower.diagonal().array() > Scalar(0)).all()) return {std::move(lower), jitter};
    }
  }
  throw IndefiniteMatrixError("cholesky_jitter: factorization failed after " +
                              std::to_string(kMaxJitterEscalations) + " jitter escalations");
}

/// A^{-1} * rhs via forward and backward triangular solves.
template <typename Scalar, typename Derived>
MatrixX<Scalar> tri_solve(const CholeskyFactor<Scalar>& factor,
                          const Eigen::MatrixBase<Derived>& rhs) {
  if (rhs.rows() != factor.size()) {
    throw DimensionError("tri_solve: rhs has " + std::to_string(rhs.rows()) + " rows, factor is " +
                         std::to_string(factor.size()));
  }
  MatrixX<Scalar> out = rhs;
  const auto lower = factor.lower.template triangularView<Eigen::Lower>();
  lower.solveInPlace(out);
  lower.transpose().solveInPlace(out);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> inverse(const CholeskyFactor<Scalar>& factor) {
  return tri_solve(factor, MatrixX<Scalar>::Identity(factor.size(), factor.size()));
}

template <typename Scalar>
Scalar logdet(const CholeskyFactor<Scalar>& factor) {
  return Scalar(2) * factor.lower.diagonal().array().log().sum();
}

/// Symmetric part, (g + g^T) / 2.
template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& g) {
  return (g + g.transpose()) / 2;
}

}  // namespace hmogp
