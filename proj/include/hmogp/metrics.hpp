#pragma once

#include <optional>
#include <vector>

#include "hmogp/kron_linalg.hpp"

namespace hmogp {

/// Mean squared error over the mean squared deviation of y_true from its own mean.
double nmse(const Vector& y_true, const Vector& y_pred);

/// Average negative log predictive density of independent Gaussians.
double nlpd(const Vector& y_true, const Vector& mean, const Vector& variance);

struct OutputScore {
  Index output = 0;
  Index n_test = 0;
  std::optional<double> nmse;  ///< undefined for fewer than 2 points or constant targets
  double nlpd = 0.0;
};

struct EvalReport {
  double nmse = 0.0;  ///< pooled over all test points
  double nlpd = 0.0;  ///< pooled over all test points
  Index n_test = 0;
  std::vector<OutputScore> per_output;
};

/// Pooled and per-output scores; entry d of each vector holds output d's test points.
EvalReport evaluate(const std::vector<Vector>& y_true, const std::vector<Vector>& mean,
                    const std::vector<Vector>& variance);

}  // namespace hmogp
