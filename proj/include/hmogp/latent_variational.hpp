#pragma once

// Variational distributions over latent output coordinates and inducing
// variables, the expectation statistics of the latent kernel under q(H), and
// both KL terms of the bound.

#include <cstdint>
#include <vector>

#include "hmogp/kernels.hpp"

namespace hmogp {

/// q(H) = prod_d N(h_d | means.row(d), diag(variances.row(d))).
struct LatentPosterior {
  Matrix means;      ///< D x Q_H
  Matrix variances;  ///< D x Q_H, strictly positive

  Index output_count() const { return means.rows(); }
  Index latent_dim() const { return means.cols(); }
  void validate() const;
};

/// Inducing locations and the Kronecker-factorized q(U_:) = N(vec(mean), S_H kron S_X),
/// with U in R^{M_X x M_H} and vec stacking columns.
struct InducingState {
  ReplicaInputs zx;  ///< R blocks of M_r points
  Matrix zh;         ///< M_H x Q_H
  Matrix mean;       ///< M_X x M_H
  Matrix chol_h;     ///< lower factor of S_H, positive diagonal
  Matrix chol_x;     ///< lower factor of S_X, positive diagonal

  Index mx() const { return zx.total_points(); }
  Index mh() const { return zh.rows(); }
  Matrix cov_h() const { return chol_h * chol_h.transpose(); }
  Matrix cov_x() const { return chol_x * chol_x.transpose(); }
  void validate() const;
};

/// Expectations of the latent kernel under q(H).
///   psi0(d)            = <k_H(h_d, h_d)>
///   psi1(d, m)         = <k_H(h_d, z_m)>
///   psi2_per_output[d] = <k_H(h_d, Z)^T k_H(h_d, Z)>   (M_H x M_H)
///   psi2               = sum_d psi2_per_output[d]
struct PsiStats {
  Vector psi0;
  Matrix psi1;
  std::vector<Matrix> psi2_per_output;
  Matrix psi2;
};

/// Closed-form statistics for an ARD-RBF latent kernel under diagonal Gaussians.
/// Throws UnsupportedKernelError for other families (use psi_stats_mc).
PsiStats psi_stats_closed_form(const LatentPosterior& q, const StationaryKernelSpec& kh,
                               const Matrix& zh);

struct PsiStatsEstimate {
  PsiStats mean;
  PsiStats std_error;  ///< per-entry standard error of the sample mean
};

/// Sample-mean estimate with `samples` draws per output; deterministic for a seed.
PsiStatsEstimate psi_stats_mc(const LatentPosterior& q, const StationaryKernelSpec& kh,
                              const Matrix& zh, Index samples, std::uint64_t seed);

/// KL(q(H) || N(0, I)).
double kl_latent(const LatentPosterior& q);

/// KL(q(U_:) || N(0, K^H kron K^X)) through the factorized form.
double kl_inducing_kron(const InducingState& state, const Matrix& kuu_h, const Matrix& kuu_x,
                        double base_jitter = kDefaultBaseJitter);

// ---------------------------------------------------------------------------
// Reverse mode through psi_stats_closed_form.

struct PsiGrad {
  Matrix means;          ///< D x Q_H
  Matrix log_variances;  ///< D x Q_H
  Matrix zh;             ///< M_H x Q_H
  StationaryKernelGrad kernel;
};

/// upstream_psi1 is D x M_H; upstream_psi2 has one M_H x M_H matrix per output
/// (empty matrices are skipped). psi0 carries no dependence on q for stationary k_H.
void backprop_psi_closed_form(const LatentPosterior& q, const StationaryKernelSpec& kh,
                              const Matrix& zh, const Matrix& upstream_psi1,
                              const std::vector<Matrix>& upstream_psi2, PsiGrad& grad);

}  // namespace hmogp
