#pragma once

// Evidence lower bound L = F - KL(q(U)) - KL(q(H)).
//
// Two data regimes share one evaluator: the shared-input regime (one noise
// variance, Psi = Psi^H kron K_fU^X) and the per-output regime (sum over
// outputs with their own inputs and noise). Both use the Kronecker-factorized
// covariance S_U = S_H kron S_X and never materialize anything larger than
// M_X x M_X or N x M_X.

#include <optional>
#include <vector>

#include "hmogp/model.hpp"

namespace hmogp {

struct ElboBreakdown {
  double f_term = 0.0;
  double kl_u = 0.0;
  double kl_h = 0.0;
  double total = 0.0;
  double jitter_h = 0.0;  ///< jitter added to K_UU^H
  double jitter_x = 0.0;  ///< jitter added to K_UU^X
};

/// d(total)/d(parameter), with positive quantities differentiated in log space.
/// chol_h / chol_x hold derivatives w.r.t. the strictly-lower entries and, on
/// the diagonal, w.r.t. the log of the diagonal entries.
struct StateGradient {
  HierarchicalKernelGrad hier;
  StationaryKernelGrad latent_kernel;
  Matrix latent_means;
  Matrix latent_log_variances;
  std::vector<Matrix> zx;
  Matrix zh;
  Matrix mean;
  Matrix chol_h;
  Matrix chol_x;
  Vector log_noise;
};

ElboBreakdown elbo_shared(const ModelState& state, const SharedInputData& data);
/// `y` stacked outputs-major, length D * x.total_points().
ElboBreakdown elbo_shared(const ModelState& state, const ReplicaInputs& x, const Vector& y);
ElboBreakdown elbo_per_output(const ModelState& state, const PerOutputData& data);

ElboBreakdown elbo(const ModelState& state, const TrainingData& data);
ElboBreakdown elbo_with_gradient(const ModelState& state, const TrainingData& data,
                                 StateGradient& grad);

/// Dense evaluation of the bound before any Kronecker factorization; reference
/// path for tests. `dense_cov_u`, when given, replaces S_H kron S_X by an
/// arbitrary (M_X M_H) x (M_X M_H) covariance for q(U_:).
ElboBreakdown elbo_naive_oracle(const ModelState& state, const TrainingData& data,
                                const std::optional<Matrix>& dense_cov_u = std::nullopt);

inline constexpr Index kNaiveOracleMaxLatentSize = 200;

/// log N(y | 0, K_ff + noise) with H fixed at the q(H) means.
double exact_log_marginal_fixed_h(const ModelState& state, const TrainingData& data);

/// Optimal q(U_:) for fixed hyperparameters and H (free-form covariance):
/// returns {mean, covariance} over vec(U). Used by tightness checks and by
/// tests that need an exactly optimized q(U).
struct OptimalInducing {
  Vector mean;
  Matrix cov;
};
inline constexpr Index kOptimalInducingMaxSize = 600;
OptimalInducing optimal_inducing_posterior(const ModelState& state, const TrainingData& data);

}  // namespace hmogp
