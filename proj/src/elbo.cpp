#include "hmogp/elbo.hpp"

#include <cmath>
#include <numbers>

namespace hmogp {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Observations that share one input set and one noise variance. The shared
// regime is a single group over all outputs; the per-output regime has one
// group per output.
struct Group {
  const ReplicaInputs* x = nullptr;
  Matrix y;                    // n x |outputs|
  std::vector<Index> outputs;  // model output index of each column of y
  Index noise_index = 0;
};

std::vector<Group> make_groups(const ModelState& state, const TrainingData& data) {
  validate_data(data, state);
  std::vector<Group> groups;
  if (const auto* shared = std::get_if<SharedInputData>(&data)) {
    if (state.per_output_noise()) {
      throw DimensionError("the shared-input bound uses a single noise variance");
    }
    Group g;
    g.x = &shared->x;
    g.y = shared->y;
    for (Index d = 0; d < shared->y.cols(); ++d) g.outputs.push_back(d);
    groups.push_back(std::move(g));
  } else {
    const auto& per = std::get<PerOutputData>(data);
    for (Index d = 0; d < per.output_count(); ++d) {
      const auto du = static_cast<std::size_t>(d);
      if (per.x[du].total_points() == 0) continue;
      Group g;
      g.x = &per.x[du];
      g.y = per.y[du];
      g.outputs = {d};
      g.noise_index = state.per_output_noise() ? d : 0;
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

// Sum of squared entries of a .* b, i.e. tr(a^T b).
double frob(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

Matrix lower_of(const Matrix& m) { return m.triangularView<Eigen::Lower>(); }

// Gradient of a loss w.r.t. a lower factor L (diag in log space) from dL/dS, S = L L^T.
Matrix chol_param_grad(const Matrix& lower, const Matrix& grad_cov) {
  Matrix g = lower_of((grad_cov + grad_cov.transpose()) * lower);
  g.diagonal().array() *= lower.diagonal().array();
  return g;
}

ElboBreakdown evaluate(const ModelState& state, const std::vector<Group>& groups,
                       StateGradient* grad) {
  const auto& ind = state.inducing;
  const Index m_x = ind.mx();
  const Index m_h = ind.mh();
  const Index d_count = state.output_count();
  const double v_h = state.latent_kernel.variance;
  const double v_f = state.hier.kf.variance;
  const double v_g = state.hier.kg.variance;

  const Matrix kx = hier_block_cov(state.hier, ind.zx, ind.zx);
  const Matrix kh = latent_cov(state.latent_kernel, ind.zh, ind.zh);
  const auto fx = cholesky_jitter(kx, state.base_jitter);
  const auto fh = cholesky_jitter(kh, state.base_jitter);
  const Matrix jx = inverse(fx);
  const Matrix jh = inverse(fh);
  const PsiStats psi = psi_stats_closed_form(state.latent, state.latent_kernel, ind.zh);
  const Matrix sh = ind.cov_h();
  const Matrix sx = ind.cov_x();
  const Matrix& mean = ind.mean;
  const Matrix c = jx * mean * jh;  // K_X^{-1} M K_H^{-1}

  ElboBreakdown out;
  out.jitter_h = fh.jitter_used;
  out.jitter_x = fx.jitter_used;

  Matrix g_c, g_jx, g_jh, g_sx, g_sh, g_psi1, g_mean;
  std::vector<Matrix> g_psi2;
  if (grad) {
    g_c = Matrix::Zero(m_x, m_h);
    g_jx = Matrix::Zero(m_x, m_x);
    g_jh = Matrix::Zero(m_h, m_h);
    g_sx = Matrix::Zero(m_x, m_x);
    g_sh = Matrix::Zero(m_h, m_h);
    g_psi1 = Matrix::Zero(d_count, m_h);
    g_psi2.assign(static_cast<std::size_t>(d_count), Matrix());
    grad->hier = HierarchicalKernelGrad(state.input_dim());
    grad->latent_kernel = StationaryKernelGrad(state.latent_dim());
    grad->zx.clear();
    for (const auto& b : ind.zx.blocks) grad->zx.push_back(Matrix::Zero(b.rows(), b.cols()));
    grad->log_noise = Vector::Zero(state.noise.size());
  }

  double f_term = 0.0;
  for (const Group& g : groups) {
    const Index n = g.x->total_points();
    const auto dg = static_cast<Index>(g.outputs.size());
    const double nd = static_cast<double>(n * dg);
    const double noise = state.noise(g.noise_index);
    const double s = 1.0 / noise;

    const Matrix a = hier_block_cov(state.hier, *g.x, ind.zx);  // n x M_X
    const Matrix phx = a.transpose() * a;
    Matrix psi_g(dg, m_h);
    Matrix phh = Matrix::Zero(m_h, m_h);
    for (Index i = 0; i < dg; ++i) {
      const Index d = g.outputs[static_cast<std::size_t>(i)];
      psi_g.row(i) = psi.psi1.row(d);
      phh += psi.psi2_per_output[static_cast<std::size_t>(d)];
    }
    const double psi_trace = static_cast<double>(dg) * v_h * static_cast<double>(n) * (v_f + v_g);

    const double yy = g.y.squaredNorm();
    const Matrix jx_phx_jx = jx * phx * jx;
    const Matrix jh_phh_jh = jh * phh * jh;
    const Matrix phx_c = phx * c;
    const double t1 = frob(phx_c * phh, c);                  // tr(C^T Phx C Phh)
    const double tr_a = frob(jh_phh_jh, sh);                 // tr(Jh Phh Jh Sh)
    const double tr_b = frob(jx_phx_jx, sx);                 // tr(Jx Phx Jx Sx)
    const Matrix w = g.y.transpose() * a * c;                // dg x M_H
    const double t3 = frob(w, psi_g);                        // y^T (A C Psi^T)_:
    const double tr_c = frob(jh, phh);                       // tr(Jh Phh)
    const double tr_e = frob(jx, phx);                       // tr(Jx Phx)

    const double quad = -0.5 * yy - 0.5 * t1 - 0.5 * tr_a * tr_b + t3 - 0.5 * psi_trace +
                        0.5 * tr_c * tr_e;
    f_term += -0.5 * nd * (kLog2Pi + std::log(noise)) + s * quad;

    if (!grad) continue;

    grad->log_noise(g.noise_index) += -0.5 * nd - s * quad;

    g_c += -s * phx_c * phh + s * a.transpose() * g.y * psi_g;

    const Matrix g_phx = -0.5 * s * c * phh * c.transpose() - 0.5 * s * tr_a * (jx * sx * jx) +
                         0.5 * s * tr_c * jx;
    const Matrix g_phh = -0.5 * s * c.transpose() * phx * c - 0.5 * s * tr_b * (jh * sh * jh) +
                         0.5 * s * tr_e * jh;
    g_sh += -0.5 * s * tr_b * jh_phh_jh;
    g_sx += -0.5 * s * tr_a * jx_phx_jx;
    g_jh += -0.5 * s * tr_b * (phh * jh * sh + sh * jh * phh) + 0.5 * s * tr_e * phh;
    g_jx += -0.5 * s * tr_a * (phx * jx * sx + sx * jx * phx) + 0.5 * s * tr_c * phx;

    const Matrix g_a = 2.0 * a * symmetrized(g_phx) + s * g.y * psi_g * c.transpose();
    backprop_hier_block(state.hier, *g.x, ind.zx, g_a, grad->hier, nullptr, &grad->zx);

    const Matrix g_psi_g = s * w;
    for (Index i = 0; i < dg; ++i) {
      const auto d = static_cast<std::size_t>(g.outputs[static_cast<std::size_t>(i)]);
      g_psi1.row(static_cast<Index>(d)) += g_psi_g.row(i);
      if (g_psi2[d].size() == 0) g_psi2[d] = Matrix::Zero(m_h, m_h);
      g_psi2[d] += g_phh;
    }

    // psi = |g| v_H n (v_f + v_g)
    const double g_psi_trace = -0.5 * s;
    const double base = static_cast<double>(dg) * v_h * static_cast<double>(n);
    grad->latent_kernel.log_variance += g_psi_trace * psi_trace;
    grad->hier.kf.log_variance += g_psi_trace * base * v_f;
    grad->hier.kg.log_variance += g_psi_trace * base * v_g;
  }

  // KL(q(U) || p(U)) with S_U = S_H kron S_X.
  const double md_x = static_cast<double>(m_x);
  const double md_h = static_cast<double>(m_h);
  const double logdet_sh = 2.0 * ind.chol_h.diagonal().array().log().sum();
  const double logdet_sx = 2.0 * ind.chol_x.diagonal().array().log().sum();
  const double kl_quad = frob(mean, c);  // tr(M^T Jx M Jh)
  const double tr_jh_sh = frob(jh, sh);
  const double tr_jx_sx = frob(jx, sx);
  out.kl_u = 0.5 * (md_x * (logdet(fh) - logdet_sh) + md_h * (logdet(fx) - logdet_sx) + kl_quad +
                    tr_jh_sh * tr_jx_sx - md_h * md_x);
  out.kl_h = kl_latent(state.latent);
  out.f_term = f_term;
  out.total = out.f_term - out.kl_u - out.kl_h;

  if (!grad) return out;

  g_mean = -c;
  g_jx += -0.5 * mean * jh * mean.transpose() - 0.5 * tr_jh_sh * sx;
  g_jh += -0.5 * mean.transpose() * jx * mean - 0.5 * tr_jx_sx * sh;
  g_sh += -0.5 * tr_jx_sx * jh;
  g_sx += -0.5 * tr_jh_sh * jx;

  // Through C = Jx M Jh.
  g_mean += jx * g_c * jh;
  g_jx += g_c * jh * mean.transpose();
  g_jh += mean.transpose() * jx * g_c;

  // Through J = K^{-1}; log|K| terms enter K directly.
  const Matrix g_kx = -0.5 * md_h * jx - jx * symmetrized(g_jx) * jx;
  const Matrix g_kh = -0.5 * md_x * jh - jh * symmetrized(g_jh) * jh;
  backprop_hier_block(state.hier, ind.zx, ind.zx, g_kx, grad->hier, &grad->zx, &grad->zx);
  grad->zh = Matrix::Zero(m_h, state.latent_dim());
  backprop_stationary(state.latent_kernel, ind.zh, ind.zh, g_kh, grad->latent_kernel, &grad->zh,
                      &grad->zh);

  PsiGrad pg;
  backprop_psi_closed_form(state.latent, state.latent_kernel, ind.zh, g_psi1, g_psi2, pg);
  grad->latent_kernel += pg.kernel;
  grad->zh += pg.zh;
  // KL(q(H)) = 1/2 sum (s + mu^2 - 1 - log s)
  grad->latent_means = pg.means - state.latent.means;
  grad->latent_log_variances =
      pg.log_variances - 0.5 * (state.latent.variances.array() - 1.0).matrix();

  grad->mean = g_mean;
  grad->chol_h = chol_param_grad(ind.chol_h, g_sh);
  grad->chol_x = chol_param_grad(ind.chol_x, g_sx);
  // +1/2 M_X log|S_H| + 1/2 M_H log|S_X| from the KL
  grad->chol_h.diagonal().array() += md_x;
  grad->chol_x.diagonal().array() += md_h;

  if (state.flat) grad->hier.kg = StationaryKernelGrad(state.input_dim());
  return out;
}

// ---------------------------------------------------------------------------
// Dense reference pieces.

struct DenseGroupTerms {
  Matrix psi;  // n|g| x (M_H M_X)
  Matrix phi;  // (M_H M_X) x (M_H M_X)
  Vector y;
  double psi_trace = 0.0;
  double noise = 1.0;
  Index n = 0;
};

struct DenseModel {
  Matrix kuu;
  Matrix kuu_inv;
  double kuu_logdet = 0.0;
  Vector m_vec;
  std::vector<DenseGroupTerms> groups;
};

DenseModel dense_model(const ModelState& state, const std::vector<Group>& groups, Index max_size,
                       const char* who) {
  const auto& ind = state.inducing;
  const Index size = ind.mx() * ind.mh();
  if (size > max_size) {
    throw DimensionError(std::string(who) + " limited to M_X * M_H <= " + std::to_string(max_size));
  }
  const auto fx = cholesky_jitter(hier_block_cov(state.hier, ind.zx, ind.zx), state.base_jitter);
  const auto fh = cholesky_jitter(latent_cov(state.latent_kernel, ind.zh, ind.zh), state.base_jitter);
  const Matrix kx = fx.lower * fx.lower.transpose();
  const Matrix kh = fh.lower * fh.lower.transpose();

  DenseModel dm;
  dm.kuu = kron(kh, kx);
  Eigen::LLT<Matrix> llt(dm.kuu);
  dm.kuu_inv = llt.solve(Matrix::Identity(size, size));
  dm.kuu_logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  dm.m_vec = Eigen::Map<const Vector>(ind.mean.data(), ind.mean.size());

  const PsiStats psi = psi_stats_closed_form(state.latent, state.latent_kernel, ind.zh);
  for (const Group& g : groups) {
    const Matrix a = hier_block_cov(state.hier, *g.x, ind.zx);
    DenseGroupTerms t;
    t.n = a.rows();
    Matrix psi_h(static_cast<Index>(g.outputs.size()), ind.mh());
    Matrix phi_h = Matrix::Zero(ind.mh(), ind.mh());
    for (std::size_t i = 0; i < g.outputs.size(); ++i) {
      psi_h.row(static_cast<Index>(i)) = psi.psi1.row(g.outputs[i]);
      phi_h += psi.psi2_per_output[static_cast<std::size_t>(g.outputs[i])];
    }
    t.psi = kron(psi_h, a);
    t.phi = kron(phi_h, Matrix(a.transpose() * a));
    t.y = Eigen::Map<const Vector>(g.y.data(), g.y.size());
    double diag_sum = 0.0;
    for (Index d = 0; d < static_cast<Index>(g.outputs.size()); ++d) {
      diag_sum += psi.psi0(g.outputs[static_cast<std::size_t>(d)]) *
                  (state.hier.kf.variance + state.hier.kg.variance) * static_cast<double>(t.n);
    }
    t.psi_trace = diag_sum;
    t.noise = state.noise(g.noise_index);
    dm.groups.push_back(std::move(t));
  }
  return dm;
}

}  // namespace

ElboBreakdown elbo_shared(const ModelState& state, const SharedInputData& data) {
  return evaluate(state, make_groups(state, TrainingData(data)), nullptr);
}

ElboBreakdown elbo_shared(const ModelState& state, const ReplicaInputs& x, const Vector& y) {
  return elbo_shared(state, make_shared_data(x, y, state.output_count()));
}

ElboBreakdown elbo_per_output(const ModelState& state, const PerOutputData& data) {
  return evaluate(state, make_groups(state, TrainingData(data)), nullptr);
}

ElboBreakdown elbo(const ModelState& state, const TrainingData& data) {
  return evaluate(state, make_groups(state, data), nullptr);
}

ElboBreakdown elbo_with_gradient(const ModelState& state, const TrainingData& data,
                                 StateGradient& grad) {
  return evaluate(state, make_groups(state, data), &grad);
}

ElboBreakdown elbo_naive_oracle(const ModelState& state, const TrainingData& data,
                                const std::optional<Matrix>& dense_cov_u) {
  const auto groups = make_groups(state, data);
  const DenseModel dm = dense_model(state, groups, kNaiveOracleMaxLatentSize, "naive oracle");
  const auto& ind = state.inducing;
  const Matrix cov_u = dense_cov_u ? *dense_cov_u : kron(ind.cov_h(), ind.cov_x());
  if (cov_u.rows() != dm.kuu.rows() || cov_u.cols() != dm.kuu.cols()) {
    throw DimensionError("naive oracle: q(U) covariance has the wrong size");
  }
  const Matrix second_moment = dm.m_vec * dm.m_vec.transpose() + cov_u;

  ElboBreakdown out;
  for (const auto& t : dm.groups) {
    const double s = 1.0 / t.noise;
    const double n = static_cast<double>(t.y.size());
    const Matrix k_phi_k = dm.kuu_inv * t.phi * dm.kuu_inv;
    out.f_term += -0.5 * n * std::log(2.0 * std::numbers::pi * t.noise) - 0.5 * s * t.y.squaredNorm() +
                  s * t.y.dot(t.psi * (dm.kuu_inv * dm.m_vec)) -
                  0.5 * s * (t.psi_trace - (dm.kuu_inv * t.phi).trace()) -
                  0.5 * s * (k_phi_k * second_moment).trace();
  }
  Eigen::LLT<Matrix> llt_s(cov_u);
  const double logdet_s = 2.0 * Matrix(llt_s.matrixL()).diagonal().array().log().sum();
  out.kl_u = 0.5 * (dm.kuu_logdet - logdet_s + (dm.kuu_inv * second_moment).trace() -
                    static_cast<double>(dm.kuu.rows()));
  out.kl_h = kl_latent(state.latent);
  out.total = out.f_term - out.kl_u - out.kl_h;
  return out;
}

OptimalInducing optimal_inducing_posterior(const ModelState& state, const TrainingData& data) {
  const auto groups = make_groups(state, data);
  const DenseModel dm = dense_model(state, groups, kOptimalInducingMaxSize, "optimal q(U)");
  const Index size = dm.kuu.rows();
  Matrix precision = dm.kuu_inv;
  Vector b = Vector::Zero(size);
  for (const auto& t : dm.groups) {
    const double s = 1.0 / t.noise;
    precision += s * dm.kuu_inv * t.phi * dm.kuu_inv;
    b += s * dm.kuu_inv * (t.psi.transpose() * t.y);
  }
  precision = symmetrized(precision);
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) throw IndefiniteMatrixError("optimal q(U): singular precision");
  OptimalInducing out;
  out.cov = llt.solve(Matrix::Identity(size, size));
  out.cov = symmetrized(out.cov);
  out.mean = out.cov * b;
  return out;
}

double exact_log_marginal_fixed_h(const ModelState& state, const TrainingData& data) {
  const auto groups = make_groups(state, data);
  // Flatten to (output, replica, point) observations, outputs-major within groups.
  std::vector<Index> out_of;
  std::vector<Index> rep_of;
  std::vector<Index> noise_of;
  std::vector<RowVector> pts;
  std::vector<double> ys;
  for (const Group& g : groups) {
    for (std::size_t i = 0; i < g.outputs.size(); ++i) {
      Index row = 0;
      for (Index r = 0; r < g.x->replica_count(); ++r) {
        const Matrix& block = g.x->blocks[static_cast<std::size_t>(r)];
        for (Index k = 0; k < block.rows(); ++k, ++row) {
          out_of.push_back(g.outputs[i]);
          rep_of.push_back(r);
          noise_of.push_back(g.noise_index);
          pts.emplace_back(block.row(k));
          ys.push_back(g.y(row, static_cast<Index>(i)));
        }
      }
    }
  }
  const auto n = static_cast<Index>(ys.size());
  if (n > 4000) throw DimensionError("exact_log_marginal_fixed_h: too many observations for dense Cholesky");
  const Matrix kh = latent_cov(state.latent_kernel, state.latent.means, state.latent.means);
  Matrix points(n, state.input_dim());
  for (Index i = 0; i < n; ++i) points.row(i) = pts[static_cast<std::size_t>(i)];
  const Matrix kf = eval_stationary(state.hier.kf, points, points);
  const Matrix kg = state.hier.kg.variance > 0.0 ? eval_stationary(state.hier.kg, points, points)
                                                 : Matrix::Zero(n, n);
  Matrix cov(n, n);
  for (Index j = 0; j < n; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    for (Index i = 0; i < n; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      const double kx = kg(i, j) + (rep_of[iu] == rep_of[ju] ? kf(i, j) : 0.0);
      cov(i, j) = kh(out_of[iu], out_of[ju]) * kx;
    }
    cov(j, j) += state.noise(noise_of[ju]);
  }
  const Vector y = Eigen::Map<const Vector>(ys.data(), n);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw IndefiniteMatrixError("exact_log_marginal_fixed_h: covariance not positive definite");
  }
  const Vector alpha = llt.matrixL().solve(y);
  const double logdet_cov = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (alpha.squaredNorm() + logdet_cov + static_cast<double>(n) * kLog2Pi);
}

}  // namespace hmogp
