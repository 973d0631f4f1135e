#pragma once

// Random tiny model instances shared by the unit tests and the acceptance run.

#include <random>

#include "hmogp/elbo.hpp"
#include "hmogp/training.hpp"

namespace hmogp::testing {

using Rng = std::mt19937_64;

inline Matrix randn(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline Matrix uniform(Rng& rng, Index rows, Index cols, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

inline double uniform_scalar(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Index uniform_index(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline Matrix random_spd(Rng& rng, Index n) {
  const Matrix a = randn(rng, n, n);
  return a * a.transpose() + static_cast<double>(n) * Matrix::Identity(n, n) * 0.5;
}

inline Matrix random_lower(Rng& rng, Index n, double diag_lo = 0.3, double diag_hi = 1.0) {
  Matrix l = randn(rng, n, n, 0.2).triangularView<Eigen::Lower>();
  for (Index i = 0; i < n; ++i) l(i, i) = uniform_scalar(rng, diag_lo, diag_hi);
  return l;
}

inline StationaryKernelSpec random_kernel(Rng& rng, KernelFamily family, Index dim, double v_lo,
                                          double v_hi) {
  StationaryKernelSpec k;
  k.family = family;
  k.variance = uniform_scalar(rng, v_lo, v_hi);
  k.lengthscales = uniform(rng, dim, 1, 0.5, 1.5);
  return k;
}

inline ReplicaInputs random_inputs(Rng& rng, Index replicas, Index per_replica, Index dim) {
  ReplicaInputs x;
  for (Index r = 0; r < replicas; ++r) x.blocks.push_back(uniform(rng, per_replica, dim));
  return x;
}

struct InstanceShape {
  Index outputs = 2;
  Index replicas = 2;
  Index points = 3;
  Index mx_per_replica = 2;
  Index mh = 2;
  Index latent_dim = 2;
  Index input_dim = 1;
  bool per_output_noise = false;
  bool flat = false;
  KernelFamily family = KernelFamily::Matern32;
};

inline ModelState random_state(Rng& rng, const InstanceShape& shape) {
  ModelState s;
  s.hier.kg = random_kernel(rng, shape.family, shape.input_dim, 0.1, 0.5);
  s.hier.kf = random_kernel(rng, shape.family, shape.input_dim, 0.5, 1.5);
  if (shape.flat) s.hier.kg.variance = 0.0;
  s.flat = shape.flat;
  s.latent_kernel = random_kernel(rng, KernelFamily::RBF, shape.latent_dim, 0.7, 1.3);
  s.latent.means = randn(rng, shape.outputs, shape.latent_dim);
  s.latent.variances = uniform(rng, shape.outputs, shape.latent_dim, 0.05, 0.5);
  s.inducing.zx = random_inputs(rng, shape.replicas, shape.mx_per_replica, shape.input_dim);
  s.inducing.zh = randn(rng, shape.mh, shape.latent_dim);
  const Index mx = s.inducing.mx();
  s.inducing.mean = randn(rng, mx, shape.mh, 0.5);
  s.inducing.chol_h = random_lower(rng, shape.mh);
  s.inducing.chol_x = random_lower(rng, mx);
  s.noise = shape.per_output_noise ? Vector(uniform(rng, shape.outputs, 1, 0.05, 0.5))
                                   : Vector::Constant(1, uniform_scalar(rng, 0.05, 0.5));
  return s;
}

inline SharedInputData random_shared_data(Rng& rng, const InstanceShape& shape) {
  SharedInputData d;
  d.x = random_inputs(rng, shape.replicas, shape.points, shape.input_dim);
  d.y = randn(rng, d.x.total_points(), shape.outputs);
  return d;
}

/// Per-output inputs with differing sizes; at most one replica block may be empty.
inline PerOutputData random_per_output_data(Rng& rng, const InstanceShape& shape) {
  PerOutputData d;
  for (Index o = 0; o < shape.outputs; ++o) {
    ReplicaInputs x;
    for (Index r = 0; r < shape.replicas; ++r) {
      const Index n = uniform_index(rng, r == 0 ? 1 : 0, shape.points);
      x.blocks.push_back(uniform(rng, n, shape.input_dim));
    }
    d.y.emplace_back(randn(rng, x.total_points(), 1));
    d.x.push_back(std::move(x));
  }
  return d;
}

/// H fixed (tiny q(H) variances) with Z^H on the latent means and Z^X = `zx`.
inline ModelState fixed_h_state(Rng& rng, const InstanceShape& shape, const ReplicaInputs& zx) {
  ModelState s = random_state(rng, shape);
  s.latent.means *= 1.5;
  s.latent.variances.setConstant(1e-13);
  s.inducing.zx = zx;
  s.inducing.zh = s.latent.means;
  s.inducing.mean = randn(rng, zx.total_points(), shape.outputs, 0.3);
  s.inducing.chol_h = random_lower(rng, shape.outputs);
  s.inducing.chol_x = random_lower(rng, zx.total_points());
  s.base_jitter = 1e-10;
  return s;
}

/// Per replica, every output's inputs stacked; Z^X that covers all data.
inline ReplicaInputs union_inputs(const PerOutputData& d) {
  ReplicaInputs u;
  const Index r_count = d.x.front().replica_count();
  for (Index r = 0; r < r_count; ++r) {
    Index rows = 0;
    for (const auto& x : d.x) rows += x.blocks[r].rows();
    Matrix block(rows, d.x.front().blocks[0].cols());
    Index at = 0;
    for (const auto& x : d.x) {
      block.middleRows(at, x.blocks[r].rows()) = x.blocks[r];
      at += x.blocks[r].rows();
    }
    u.blocks.push_back(block);
  }
  return u;
}

/// Bound with q(U) at its free-form optimum.
inline double tight_bound(ModelState s, const TrainingData& data) {
  const OptimalInducing opt = optimal_inducing_posterior(s, data);
  s.inducing.mean = Eigen::Map<const Matrix>(opt.mean.data(), s.inducing.mx(), s.inducing.mh());
  const auto b = elbo_naive_oracle(s, data, opt.cov);
  return b.f_term - b.kl_u;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

/// Largest per-coordinate |analytic - FD| / max(1, |FD|) over all parameters.
inline double max_fd_gradient_error(const ModelState& state, const TrainingData& data) {
  const FlatParams p = pack(state);
  const Vector analytic = grad_elbo(p, state, data, GradientMode::Analytic).grad;
  const Vector numeric = grad_elbo(p, state, data, GradientMode::Numeric, 1e-5).grad;
  double worst = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / std::max(1.0, std::abs(numeric(i))));
  }
  return worst;
}

}  // namespace hmogp::testing
