#include "hmogp/prediction.hpp"

#include <cmath>
#include <random>

namespace hmogp {

namespace {

void check_tags(const ModelState& state, const TaggedInputs& xstar) {
  if (static_cast<Index>(xstar.replica.size()) != xstar.points.rows()) {
    throw DimensionError("one replica tag per test point is required");
  }
  if (xstar.points.rows() > 0 && xstar.points.cols() != state.input_dim()) {
    throw DimensionError("test points have the wrong input dimension");
  }
  for (Index t : xstar.replica) {
    if (t < 0 || t >= state.replica_count()) {
      throw ReplicaTagError("replica tag " + std::to_string(t) + " outside [0, " +
                            std::to_string(state.replica_count()) + ")");
    }
  }
}

void check_output(const ModelState& state, Index output) {
  if (output < 0 || output >= state.output_count()) {
    throw DimensionError("output " + std::to_string(output) + " outside [0, " +
                         std::to_string(state.output_count()) + ")");
  }
}

// Everything about q(U) that does not depend on the latent point.
struct Projection {
  Matrix proj_mean;   // Kx*U Jx M Jh             (N* x M_H)
  Vector quad_prior;  // diag(Kx*U Jx Kx*U^T)
  Vector quad_post;   // diag(Kx*U Jx Sx Jx Kx*U^T)
  Vector kxx_diag;    // diag of the tagged hierarchical prior
  Matrix jh;
  Matrix jh_sh_jh;
  // Kept for full covariances.
  Matrix a_prior;     // Kx*U Jx
  Matrix kxu;
  Matrix sx;
};

Projection project(const ModelState& state, const TaggedInputs& xstar) {
  check_tags(state, xstar);
  const auto& ind = state.inducing;
  Projection p;
  p.kxu = hier_cross_cov(state.hier, xstar.points, xstar.replica, ind.zx);
  const auto fx = cholesky_jitter(hier_block_cov(state.hier, ind.zx, ind.zx), state.base_jitter);
  const auto fh = cholesky_jitter(latent_cov(state.latent_kernel, ind.zh, ind.zh), state.base_jitter);
  const Matrix jx = inverse(fx);
  p.jh = inverse(fh);
  p.sx = ind.cov_x();
  p.a_prior = p.kxu * jx;
  p.proj_mean = p.a_prior * ind.mean * p.jh;
  p.quad_prior = (p.a_prior.array() * p.kxu.array()).rowwise().sum();
  p.quad_post = ((p.a_prior * p.sx).array() * p.a_prior.array()).rowwise().sum();
  p.jh_sh_jh = p.jh * ind.cov_h() * p.jh;
  p.kxx_diag = Vector::Constant(xstar.size(), state.hier.kf.variance + state.hier.kg.variance);
  return p;
}

Matrix tagged_prior(const ModelState& state, const TaggedInputs& xstar) {
  Matrix k = eval_stationary(state.hier.kf, xstar.points, xstar.points);
  for (Index j = 0; j < k.cols(); ++j)
    for (Index i = 0; i < k.rows(); ++i) {
      if (xstar.replica[static_cast<std::size_t>(i)] != xstar.replica[static_cast<std::size_t>(j)]) k(i, j) = 0.0;
    }
  if (state.hier.kg.variance > 0.0) k += eval_stationary(state.hier.kg, xstar.points, xstar.points);
  return k;
}

Index clip_negative(Vector& v) {
  Index n = 0;
  for (Index i = 0; i < v.size(); ++i) {
    if (v(i) < 0.0) {
      v(i) = 0.0;
      ++n;
    }
  }
  return n;
}

}  // namespace

TaggedInputs TaggedInputs::single_replica(const Matrix& points, Index replica) {
  return {points, std::vector<Index>(static_cast<std::size_t>(points.rows()), replica)};
}

TaggedInputs TaggedInputs::from_replicas(const ReplicaInputs& x) {
  TaggedInputs t;
  t.points = x.stacked();
  for (Index r = 0; r < x.replica_count(); ++r) {
    t.replica.insert(t.replica.end(), static_cast<std::size_t>(x.blocks[static_cast<std::size_t>(r)].rows()), r);
  }
  return t;
}

PredictiveMoments predict_conditional(const ModelState& state, const TaggedInputs& xstar,
                                      const Matrix& h, const PredictOptions& options) {
  if (h.cols() != state.latent_dim()) throw DimensionError("latent points have the wrong dimension");
  const Projection p = project(state, xstar);
  const Index n = xstar.size();
  const Index count = h.rows();
  const Matrix kh_u = latent_cov(state.latent_kernel, h, state.inducing.zh);  // P x M_H
  const double v_h = state.latent_kernel.variance;

  PredictiveMoments out;
  out.mean.resize(count * n);
  out.variance.resize(count * n);
  for (Index q = 0; q < count; ++q) {
    const Vector k = kh_u.row(q).transpose();
    out.mean.segment(q * n, n) = p.proj_mean * k;
    const double c_prior = k.dot(p.jh * k);
    const double c_post = k.dot(p.jh_sh_jh * k);
    Vector var = v_h * p.kxx_diag - c_prior * p.quad_prior + c_post * p.quad_post;
    out.clipped += clip_negative(var);
    out.variance.segment(q * n, n) = var.array() + options.noise_variance;
  }
  if (options.full_covariance) {
    const Matrix kh_hh = latent_cov(state.latent_kernel, h, h);
    const Matrix c_prior = kh_u * p.jh * kh_u.transpose();
    const Matrix c_post = kh_u * p.jh_sh_jh * kh_u.transpose();
    const Matrix x_prior = tagged_prior(state, xstar);
    const Matrix x_nys = p.a_prior * p.kxu.transpose();
    const Matrix x_post = p.a_prior * p.sx * p.a_prior.transpose();
    Matrix cov = kron(kh_hh, x_prior) - kron(c_prior, x_nys) + kron(c_post, x_post);
    cov.diagonal().array() += options.noise_variance;
    out.covariance = cov;
  }
  return out;
}

PredictiveMoments predict_marginal(const ModelState& state, const TaggedInputs& xstar, Index output,
                                   Index samples, std::uint64_t seed, bool include_noise) {
  check_output(state, output);
  if (samples < 1) throw Error("predict_marginal: need at least one sample");
  const Projection p = project(state, xstar);
  const Index n = xstar.size();
  const Index q_dim = state.latent_dim();
  const RowVector mu = state.latent.means.row(output);
  const RowVector sd = state.latent.variances.row(output).array().sqrt();
  const double v_h = state.latent_kernel.variance;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector sum_mean = Vector::Zero(n);
  Vector sum_mean_sq = Vector::Zero(n);
  Vector sum_var = Vector::Zero(n);
  Matrix h(1, q_dim);
  PredictiveMoments out;
  for (Index s = 0; s < samples; ++s) {
    for (Index j = 0; j < q_dim; ++j) h(0, j) = mu(j) + sd(j) * normal(rng);
    const Vector k = latent_cov(state.latent_kernel, h, state.inducing.zh).row(0).transpose();
    const Vector m = p.proj_mean * k;
    Vector var = v_h * p.kxx_diag - k.dot(p.jh * k) * p.quad_prior + k.dot(p.jh_sh_jh * k) * p.quad_post;
    out.clipped += clip_negative(var);
    sum_mean += m;
    sum_mean_sq += m.cwiseAbs2();
    sum_var += var;
  }
  const double ns = static_cast<double>(samples);
  out.mean = sum_mean / ns;
  const Vector spread = (sum_mean_sq / ns - out.mean.cwiseAbs2()).cwiseMax(0.0);
  out.variance = sum_var / ns + spread;
  if (include_noise) out.variance.array() += state.noise_for(output);
  out.mean_std_error = (spread / ns).cwiseSqrt();
  return out;
}

Vector predict_marginal_mean_closed_form(const ModelState& state, const TaggedInputs& xstar,
                                         Index output) {
  check_output(state, output);
  const Projection p = project(state, xstar);
  LatentPosterior one{state.latent.means.row(output), state.latent.variances.row(output)};
  const PsiStats psi = psi_stats_closed_form(one, state.latent_kernel, state.inducing.zh);
  return p.proj_mean * psi.psi1.row(0).transpose();
}

PredictiveMoments predict_missing_replica(const ModelState& state, Index output, Index replica,
                                          const Matrix& grid, Index samples, std::uint64_t seed,
                                          bool include_noise) {
  return predict_marginal(state, TaggedInputs::single_replica(grid, replica), output, samples, seed,
                          include_noise);
}

}  // namespace hmogp
