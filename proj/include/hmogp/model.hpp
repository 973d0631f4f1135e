#pragma once

#include <variant>
#include <vector>

#include "hmogp/latent_variational.hpp"

namespace hmogp {

/// Every free quantity of the model, in natural units.
struct ModelState {
  HierarchicalKernelSpec hier;
  StationaryKernelSpec latent_kernel;
  LatentPosterior latent;
  InducingState inducing;
  /// Noise variances: one shared value, or one per output.
  Vector noise = Vector::Constant(1, 0.1);
  /// Flat ablation: k_g switched off (variance 0, not trained).
  bool flat = false;
  double base_jitter = kDefaultBaseJitter;

  Index output_count() const { return latent.output_count(); }
  Index latent_dim() const { return latent.latent_dim(); }
  Index replica_count() const { return inducing.zx.replica_count(); }
  Index input_dim() const { return hier.input_dim(); }
  bool per_output_noise() const { return noise.size() > 1; }
  double noise_for(Index d) const { return per_output_noise() ? noise(d) : noise(0); }

  void validate() const;
};

/// All outputs observed at the same replica inputs. Column d of `y` holds
/// output d stacked over replicas, so vec(y) is the outputs-major target vector.
struct SharedInputData {
  ReplicaInputs x;
  Matrix y;
};

/// Output d observed on its own replica inputs x[d] with targets y[d].
struct PerOutputData {
  std::vector<ReplicaInputs> x;
  std::vector<Vector> y;

  Index output_count() const { return static_cast<Index>(x.size()); }
};

using TrainingData = std::variant<SharedInputData, PerOutputData>;

/// Shared-input data from an outputs-major stacked vector of length D * total_points.
SharedInputData make_shared_data(const ReplicaInputs& x, const Vector& y_stacked, Index outputs);

/// The same observations expressed in the per-output layout.
PerOutputData to_per_output(const SharedInputData& data);

Index output_count(const TrainingData& data);
Index replica_count(const TrainingData& data);
void validate_data(const TrainingData& data, const ModelState& state);

}  // namespace hmogp
