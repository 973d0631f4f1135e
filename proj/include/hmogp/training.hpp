#pragma once

// Unconstrained parameter vector, gradients, Adam ascent and the fit loop.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hmogp/elbo.hpp"

namespace hmogp {

struct ParamSpan {
  std::string name;
  Index offset = 0;
  Index size = 0;
};

/// Every trainable quantity of a ModelState mapped to R^P. Positive
/// quantities are stored as logs; the Cholesky factors of S_H and S_X store
/// their strictly-lower entries (column-major) followed by the log diagonal.
///
/// Span names: kg.log_variance, kg.log_lengthscales (absent for the flat
/// ablation), kf.log_variance, kf.log_lengthscales, kh.log_variance,
/// kh.log_lengthscales, latent.means, latent.log_variances, inducing.zx,
/// inducing.zh, inducing.mean, inducing.chol_h, inducing.chol_x,
/// noise.log_variance.
struct FlatParams {
  Vector values;
  std::vector<ParamSpan> layout;

  Index size() const { return values.size(); }
  const ParamSpan& span(const std::string& name) const;
  /// Name of the span that holds coordinate i.
  const std::string& span_of(Index i) const;
};

FlatParams pack(const ModelState& state);
/// Inverse of pack; `shape` supplies kernel families, block sizes and the flat flag.
ModelState unpack(const FlatParams& params, const ModelState& shape);
/// StateGradient laid out like pack(state).
Vector pack_gradient(const StateGradient& grad, const ModelState& state);

enum class GradientMode { Analytic, Numeric };

struct OptimizerConfig {
  double learning_rate = 0.01;
  Index iterations = 10000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  GradientMode gradient_mode = GradientMode::Analytic;
  double fd_step = 1e-5;  ///< relative: h = fd_step * max(1, |theta_i|)
  std::uint64_t seed = 0;
  /// Span names to optimize; all spans when empty.
  std::vector<std::string> trainable;
  /// Log a plateau message when the best ELBO has not improved for this many iterations.
  Index plateau_window = 500;
  /// Progress and plateau messages on std::clog.
  bool verbose = false;

  void validate() const;
};

struct ElboAndGradient {
  ElboBreakdown elbo;
  Vector grad;
};

/// ELBO and its gradient w.r.t. params.values. Throws EvaluationError naming a
/// span when the bound or a gradient entry is not finite.
ElboAndGradient grad_elbo(const FlatParams& params, const ModelState& shape,
                          const TrainingData& data, GradientMode mode, double fd_step = 1e-5);

struct AdamMoments {
  Vector m;
  Vector v;
};

/// One bias-corrected Adam ascent step at step count t >= 1.
void adam_step(Vector& params, const Vector& grad, AdamMoments& moments,
               const OptimizerConfig& config, Index t);

struct InitConfig {
  Index latent_dim = 2;
  Index inducing_h = 8;
  Index inducing_x_per_replica = 5;
  KernelFamily kg_family = KernelFamily::Matern32;
  KernelFamily kf_family = KernelFamily::Matern32;
  bool flat = false;
  bool per_output_noise = true;
  double latent_variance = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Data-driven starting point; see README for the rules.
ModelState initialize(const TrainingData& data, const InitConfig& config);

struct FitResult {
  ModelState state;            ///< state attaining max(trace)
  std::vector<double> trace;   ///< ELBO before each step and after the last one
  Index best_iteration = 0;
  Index jitter_events = 0;     ///< evaluations that needed jitter on K_UU
  Index recovered_failures = 0;
};

FitResult fit(const TrainingData& data, const ModelState& init, const OptimizerConfig& config);
FitResult fit(const TrainingData& data, const OptimizerConfig& config, const InitConfig& init);

}  // namespace hmogp
