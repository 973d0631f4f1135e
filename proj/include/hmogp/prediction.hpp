#pragma once

// Predictive moments of f* for existing outputs, with H fixed or integrated
// over q(H), including replicas that have no training data.

#include <cstdint>
#include <optional>
#include <vector>

#include "hmogp/model.hpp"

namespace hmogp {

/// Test points, each tagged with the replica it belongs to.
struct TaggedInputs {
  Matrix points;               ///< N* x v
  std::vector<Index> replica;  ///< one tag per row

  Index size() const { return points.rows(); }
  static TaggedInputs single_replica(const Matrix& points, Index replica);
  static TaggedInputs from_replicas(const ReplicaInputs& x);
};

struct PredictiveMoments {
  Vector mean;
  Vector variance;
  /// Full covariance, only when requested (tests).
  std::optional<Matrix> covariance;
  /// Monte Carlo standard error of `mean`, for mixture predictions.
  std::optional<Vector> mean_std_error;
  /// Entries of a noise-free variance that came out negative and were set to 0.
  Index clipped = 0;
};

struct PredictOptions {
  /// Added to every variance entry (observation noise of the predicted output).
  double noise_variance = 0.0;
  bool full_covariance = false;
};

/// Moments of q(f*) for latent points h (P x Q_H) held fixed. Results are
/// stacked latent-point-major: entry p * N* + i is latent point p at xstar row i.
PredictiveMoments predict_conditional(const ModelState& state, const TaggedInputs& xstar,
                                      const Matrix& h, const PredictOptions& options = {});

inline constexpr Index kDefaultMixtureSamples = 2000;

/// Moments of the q(h_d)-mixture by Monte Carlo over h_d. Noise of output d is
/// included when `include_noise`.
PredictiveMoments predict_marginal(const ModelState& state, const TaggedInputs& xstar, Index output,
                                   Index samples = kDefaultMixtureSamples, std::uint64_t seed = 0,
                                   bool include_noise = false);

/// Mixture mean in closed form through psi1 of q(h_d); RBF latent kernel only.
Vector predict_marginal_mean_closed_form(const ModelState& state, const TaggedInputs& xstar,
                                         Index output);

/// Predictions on `grid` for output d in replica r.
PredictiveMoments predict_missing_replica(const ModelState& state, Index output, Index replica,
                                          const Matrix& grid, Index samples = kDefaultMixtureSamples,
                                          std::uint64_t seed = 0, bool include_noise = false);

}  // namespace hmogp
