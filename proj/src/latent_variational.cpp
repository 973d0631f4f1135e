#include "hmogp/latent_variational.hpp"

#include <cmath>
#include <random>

namespace hmogp {

namespace {

void require_rbf(const StationaryKernelSpec& kh) {
  if (kh.family != KernelFamily::RBF) {
    throw UnsupportedKernelError(
        "closed-form psi statistics need an RBF latent kernel; use psi_stats_mc for '" +
        std::string(to_string(kh.family)) + "'");
  }
}

void check_latent_dims(const LatentPosterior& q, const StationaryKernelSpec& kh, const Matrix& zh) {
  if (q.latent_dim() != kh.input_dim() || (zh.rows() > 0 && zh.cols() != kh.input_dim())) {
    throw DimensionError("latent dimension mismatch between q(H), k_H and Z^H");
  }
}

bool is_lower_with_positive_diagonal(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  for (Index j = 0; j < m.cols(); ++j) {
    if (!(m(j, j) > 0.0)) return false;
    for (Index i = 0; i < j; ++i) {
      if (m(i, j) != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

void LatentPosterior::validate() const {
  if (means.rows() < 1) throw DimensionError("q(H) needs at least one output");
  if (means.rows() != variances.rows() || means.cols() != variances.cols()) {
    throw DimensionError("q(H) means and variances disagree in shape");
  }
  if (!means.allFinite() || !(variances.array() > 0.0).all() || !variances.allFinite()) {
    throw Error("q(H) variances must be positive and finite");
  }
}

void InducingState::validate() const {
  zx.validate();
  const Index m_x = mx();
  const Index m_h = mh();
  if (mean.rows() != m_x || mean.cols() != m_h) {
    throw DimensionError("inducing mean must be M_X x M_H = " + std::to_string(m_x) + "x" +
                         std::to_string(m_h));
  }
  if (chol_h.rows() != m_h || chol_x.rows() != m_x) {
    throw DimensionError("inducing covariance factors have the wrong size");
  }
  if (!is_lower_with_positive_diagonal(chol_h) || !is_lower_with_positive_diagonal(chol_x)) {
    throw Error("inducing covariance factors must be lower triangular with positive diagonal");
  }
}

PsiStats psi_stats_closed_form(const LatentPosterior& q, const StationaryKernelSpec& kh,
                               const Matrix& zh) {
  require_rbf(kh);
  check_latent_dims(q, kh, zh);
  const Index d_count = q.output_count();
  const Index m_h = zh.rows();
  const Index dim = q.latent_dim();
  const Vector ls2 = kh.lengthscales.array().square();
  const double v = kh.variance;

  PsiStats out;
  out.psi0 = Vector::Constant(d_count, v);
  out.psi1.resize(d_count, m_h);
  out.psi2 = Matrix::Zero(m_h, m_h);
  out.psi2_per_output.assign(static_cast<std::size_t>(d_count), Matrix());

  for (Index d = 0; d < d_count; ++d) {
    const auto mu = q.means.row(d);
    const auto s = q.variances.row(d);

    double norm1 = 1.0;
    double norm2 = 1.0;
    for (Index k = 0; k < dim; ++k) {
      norm1 /= std::sqrt(1.0 + s(k) / ls2(k));
      norm2 /= std::sqrt(1.0 + 2.0 * s(k) / ls2(k));
    }
    for (Index m = 0; m < m_h; ++m) {
      double e = 0.0;
      for (Index k = 0; k < dim; ++k) {
        const double diff = mu(k) - zh(m, k);
        e += diff * diff / (ls2(k) + s(k));
      }
      out.psi1(d, m) = v * norm1 * std::exp(-0.5 * e);
    }

    Matrix p2(m_h, m_h);
    for (Index m = 0; m < m_h; ++m) {
      for (Index n = m; n < m_h; ++n) {
        double e = 0.0;
        for (Index k = 0; k < dim; ++k) {
          const double dz = zh(m, k) - zh(n, k);
          const double dbar = mu(k) - 0.5 * (zh(m, k) + zh(n, k));
          e += dz * dz / (4.0 * ls2(k)) + dbar * dbar / (ls2(k) + 2.0 * s(k));
        }
        p2(m, n) = p2(n, m) = v * v * norm2 * std::exp(-e);
      }
    }
    out.psi2 += p2;
    out.psi2_per_output[static_cast<std::size_t>(d)] = std::move(p2);
  }
  return out;
}

PsiStatsEstimate psi_stats_mc(const LatentPosterior& q, const StationaryKernelSpec& kh,
                              const Matrix& zh, Index samples, std::uint64_t seed) {
  if (samples < 1) throw Error("psi_stats_mc: samples must be >= 1");
  check_latent_dims(q, kh, zh);
  const Index d_count = q.output_count();
  const Index m_h = zh.rows();
  const Index dim = q.latent_dim();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  PsiStatsEstimate est;
  est.mean.psi0 = Vector::Constant(d_count, kh.variance);
  est.std_error.psi0 = Vector::Zero(d_count);
  est.mean.psi1 = Matrix::Zero(d_count, m_h);
  est.std_error.psi1 = Matrix::Zero(d_count, m_h);
  est.mean.psi2 = Matrix::Zero(m_h, m_h);
  est.std_error.psi2 = Matrix::Zero(m_h, m_h);

  const double n = static_cast<double>(samples);
  Matrix h(1, dim);
  Matrix var_psi2_total = Matrix::Zero(m_h, m_h);
  for (Index d = 0; d < d_count; ++d) {
    RowVector sum1 = RowVector::Zero(m_h);
    RowVector sq1 = RowVector::Zero(m_h);
    Matrix sum2 = Matrix::Zero(m_h, m_h);
    Matrix sq2 = Matrix::Zero(m_h, m_h);
    for (Index t = 0; t < samples; ++t) {
      for (Index k = 0; k < dim; ++k) {
        h(0, k) = q.means(d, k) + std::sqrt(q.variances(d, k)) * normal(rng);
      }
      const RowVector k_row = eval_stationary(kh, h, zh);
      const Matrix outer = k_row.transpose() * k_row;
      sum1 += k_row;
      sq1 += k_row.cwiseProduct(k_row);
      sum2 += outer;
      sq2 += outer.cwiseProduct(outer);
    }
    const RowVector mean1 = sum1 / n;
    const Matrix mean2 = sum2 / n;
    est.mean.psi1.row(d) = mean1;
    est.mean.psi2_per_output.push_back(mean2);
    est.mean.psi2 += mean2;

    const double denom = samples > 1 ? n * (n - 1.0) : 1.0;
    const RowVector var1 = ((sq1 / n - mean1.cwiseProduct(mean1)) * n / denom).cwiseMax(0.0);
    const Matrix var2 = ((sq2 / n - mean2.cwiseProduct(mean2)) * n / denom).cwiseMax(0.0);
    est.std_error.psi1.row(d) = var1.cwiseSqrt();
    est.std_error.psi2_per_output.push_back(var2.cwiseSqrt());
    var_psi2_total += var2;
  }
  est.std_error.psi2 = var_psi2_total.cwiseSqrt();
  return est;
}

double kl_latent(const LatentPosterior& q) {
  const auto s = q.variances.array();
  const auto mu = q.means.array();
  return 0.5 * (s + mu.square() - 1.0 - s.log()).sum();
}

double kl_inducing_kron(const InducingState& state, const Matrix& kuu_h, const Matrix& kuu_x,
                        double base_jitter) {
  const Index m_h = state.mh();
  const Index m_x = state.mx();
  if (kuu_h.rows() != m_h || kuu_x.rows() != m_x) {
    throw DimensionError("kl_inducing_kron: K_UU factors do not match the inducing state");
  }
  const auto fh = cholesky_jitter(kuu_h, base_jitter);
  const auto fx = cholesky_jitter(kuu_x, base_jitter);
  const double logdet_sh = 2.0 * state.chol_h.diagonal().array().log().sum();
  const double logdet_sx = 2.0 * state.chol_x.diagonal().array().log().sum();

  const Matrix kx_inv_m = tri_solve(fx, state.mean);                 // K_X^{-1} M
  const Matrix kh_inv_mt = tri_solve(fh, Matrix(state.mean.transpose()));  // K_H^{-1} M^T
  const double quad = (kx_inv_m.transpose().array() * kh_inv_mt.array()).sum();

  const double tr_h = tri_solve(fh, state.cov_h()).trace();
  const double tr_x = tri_solve(fx, state.cov_x()).trace();

  const double md_h = static_cast<double>(m_h);
  const double md_x = static_cast<double>(m_x);
  return 0.5 * (md_x * (logdet(fh) - logdet_sh) + md_h * (logdet(fx) - logdet_sx) + quad +
                tr_h * tr_x - md_h * md_x);
}

void backprop_psi_closed_form(const LatentPosterior& q, const StationaryKernelSpec& kh,
                              const Matrix& zh, const Matrix& upstream_psi1,
                              const std::vector<Matrix>& upstream_psi2, PsiGrad& grad) {
  require_rbf(kh);
  check_latent_dims(q, kh, zh);
  const Index d_count = q.output_count();
  const Index m_h = zh.rows();
  const Index dim = q.latent_dim();
  const Vector ls2 = kh.lengthscales.array().square();
  const double v = kh.variance;

  if (grad.means.rows() != d_count) grad.means = Matrix::Zero(d_count, dim);
  if (grad.log_variances.rows() != d_count) grad.log_variances = Matrix::Zero(d_count, dim);
  if (grad.zh.rows() != m_h) grad.zh = Matrix::Zero(m_h, dim);
  if (grad.kernel.log_lengthscales.size() != dim) grad.kernel = StationaryKernelGrad(dim);

  for (Index d = 0; d < d_count; ++d) {
    const auto mu = q.means.row(d);
    const auto s = q.variances.row(d);

    if (upstream_psi1.size() > 0) {
      double norm1 = 1.0;
      for (Index k = 0; k < dim; ++k) norm1 /= std::sqrt(1.0 + s(k) / ls2(k));
      for (Index m = 0; m < m_h; ++m) {
        const double g = upstream_psi1(d, m);
        if (g == 0.0) continue;
        double e = 0.0;
        for (Index k = 0; k < dim; ++k) {
          const double diff = mu(k) - zh(m, k);
          e += diff * diff / (ls2(k) + s(k));
        }
        const double gp = g * v * norm1 * std::exp(-0.5 * e);  // g * psi1
        grad.kernel.log_variance += gp;
        for (Index k = 0; k < dim; ++k) {
          const double a = ls2(k) + s(k);
          const double diff = mu(k) - zh(m, k);
          grad.means(d, k) -= gp * diff / a;
          grad.zh(m, k) += gp * diff / a;
          grad.log_variances(d, k) += gp * s(k) * (-0.5 / a + 0.5 * diff * diff / (a * a));
          grad.kernel.log_lengthscales(k) += gp * (s(k) / a + ls2(k) * diff * diff / (a * a));
        }
      }
    }

    if (static_cast<std::size_t>(d) < upstream_psi2.size() &&
        upstream_psi2[static_cast<std::size_t>(d)].size() > 0) {
      const Matrix& g2 = upstream_psi2[static_cast<std::size_t>(d)];
      double norm2 = 1.0;
      for (Index k = 0; k < dim; ++k) norm2 /= std::sqrt(1.0 + 2.0 * s(k) / ls2(k));
      for (Index m = 0; m < m_h; ++m) {
        for (Index n = 0; n < m_h; ++n) {
          const double g = g2(m, n);
          if (g == 0.0) continue;
          double e = 0.0;
          for (Index k = 0; k < dim; ++k) {
            const double dz = zh(m, k) - zh(n, k);
            const double dbar = mu(k) - 0.5 * (zh(m, k) + zh(n, k));
            e += dz * dz / (4.0 * ls2(k)) + dbar * dbar / (ls2(k) + 2.0 * s(k));
          }
          const double gp = g * v * v * norm2 * std::exp(-e);
          grad.kernel.log_variance += 2.0 * gp;
          for (Index k = 0; k < dim; ++k) {
            const double b = ls2(k) + 2.0 * s(k);
            const double dz = zh(m, k) - zh(n, k);
            const double dbar = mu(k) - 0.5 * (zh(m, k) + zh(n, k));
            grad.means(d, k) -= gp * 2.0 * dbar / b;
            grad.zh(m, k) += gp * (-dz / (2.0 * ls2(k)) + dbar / b);
            grad.zh(n, k) += gp * (dz / (2.0 * ls2(k)) + dbar / b);
            grad.log_variances(d, k) += gp * s(k) * (-1.0 / b + 2.0 * dbar * dbar / (b * b));
            grad.kernel.log_lengthscales(k) +=
                gp * (2.0 * s(k) / b + dz * dz / (2.0 * ls2(k)) + 2.0 * ls2(k) * dbar * dbar / (b * b));
          }
        }
      }
    }
  }
}

}  // namespace hmogp
