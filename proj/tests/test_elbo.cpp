#include "doctest.h"
#include "support.hpp"

using namespace hmogp;
using namespace hmogp::testing;

namespace {

InstanceShape tiny(Rng& rng, bool per_output) {
  InstanceShape s;
  s.outputs = uniform_index(rng, 1, 3);
  s.replicas = uniform_index(rng, 1, 3);
  s.points = uniform_index(rng, 1, 4);
  s.mx_per_replica = uniform_index(rng, 1, 6 / s.replicas);
  s.mh = uniform_index(rng, 1, 3);
  s.input_dim = uniform_index(rng, 1, 2);
  s.per_output_noise = per_output && uniform_index(rng, 0, 1) == 1;
  s.flat = uniform_index(rng, 0, 3) == 0;
  return s;
}

}  // namespace

TEST_CASE("shared bound matches the dense evaluation") {
  Rng rng(20);
  for (int i = 0; i < 20; ++i) {
    const InstanceShape shape = tiny(rng, false);
    const ModelState s = random_state(rng, shape);
    const SharedInputData data = random_shared_data(rng, shape);
    const auto fast = elbo_shared(s, data);
    const auto slow = elbo_naive_oracle(s, data);
    CHECK(rel_err(fast.total, slow.total) < 1e-8);
    CHECK(rel_err(fast.kl_u, slow.kl_u) < 1e-8);
    CHECK(std::isfinite(slow.f_term));
  }
}

TEST_CASE("per-output bound matches the dense evaluation") {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const InstanceShape shape = tiny(rng, true);
    const ModelState s = random_state(rng, shape);
    const PerOutputData data = random_per_output_data(rng, shape);
    CHECK(rel_err(elbo_per_output(s, data).total, elbo_naive_oracle(s, data).total) < 1e-8);
  }
}

TEST_CASE("both regimes coincide on shared inputs with one noise") {
  Rng rng(22);
  InstanceShape shape;
  shape.outputs = 3;
  const ModelState s = random_state(rng, shape);
  const SharedInputData data = random_shared_data(rng, shape);
  CHECK(rel_err(elbo_shared(s, data).total, elbo_per_output(s, to_per_output(data)).total) < 1e-10);
  const Vector stacked = Eigen::Map<const Vector>(data.y.data(), data.y.size());
  CHECK(elbo_shared(s, data.x, stacked).total == elbo_shared(s, data).total);
}

TEST_CASE("zero-data reduction") {
  Rng rng(23);
  InstanceShape shape;
  ModelState s = random_state(rng, shape);
  s.inducing.mean.setZero();
  SharedInputData data = random_shared_data(rng, shape);
  data.y.setZero();
  const auto b = elbo_shared(s, data);

  const double noise = s.noise(0);
  const Matrix kuu = kron(latent_cov(s.latent_kernel, s.inducing.zh, s.inducing.zh),
                          hier_block_cov(s.hier, s.inducing.zx, s.inducing.zx));
  const Matrix kinv = kuu.inverse();
  const PsiStats p = psi_stats_closed_form(s.latent, s.latent_kernel, s.inducing.zh);
  const Matrix a = hier_block_cov(s.hier, data.x, s.inducing.zx);
  const Matrix phi = kron(p.psi2, Matrix(a.transpose() * a));
  const double n = static_cast<double>(data.y.size());
  const double psi = n * s.latent_kernel.variance * (s.hier.kf.variance + s.hier.kg.variance);
  const Matrix su = kron(s.inducing.cov_h(), s.inducing.cov_x());
  const double expected = -0.5 * n * std::log(2 * M_PI * noise) - 0.5 / noise * (psi - (kinv * phi).trace()) -
                          0.5 / noise * (kinv * phi * kinv * su).trace();
  CHECK(rel_err(b.f_term, expected) < 1e-8);
}

TEST_CASE("scalar case by hand") {
  ModelState s;
  s.hier.kf = {KernelFamily::RBF, 1.0, Vector::Ones(1)};
  s.hier.kg = {KernelFamily::RBF, 0.0, Vector::Ones(1)};
  s.flat = true;
  s.latent_kernel = {KernelFamily::RBF, 1.0, Vector::Ones(1)};
  s.latent.means = Matrix::Zero(1, 1);
  s.latent.variances = Matrix::Constant(1, 1, 1e-14);
  s.inducing.zx.blocks = {Matrix::Zero(1, 1)};
  s.inducing.zh = Matrix::Zero(1, 1);
  s.inducing.mean = Matrix::Constant(1, 1, 0.5);
  s.inducing.chol_h = Matrix::Constant(1, 1, 0.5);
  s.inducing.chol_x = Matrix::Constant(1, 1, 1.0);
  s.noise = Vector::Constant(1, 0.25);
  s.base_jitter = 0.0;
  SharedInputData d{ReplicaInputs{{Matrix::Zero(1, 1)}}, Matrix::Constant(1, 1, 1.0)};
  // x = z, h = z: A = 1, psi1 = 1, Phi = 1, K = 1; q(u) = N(0.5, 0.25).
  // (y - E f)^2 = 0.25, Var f = S = 0.25, and the Nystrom residual vanishes.
  const double f = std::log(1.0 / std::sqrt(2 * M_PI * 0.25)) - 0.5 / 0.25 * (0.25 + 0.25);
  const double kl = 0.5 * (0.25 + 0.25 - 1.0 - std::log(0.25));
  const auto b = elbo_naive_oracle(s, d);
  CHECK(b.f_term == doctest::Approx(f).epsilon(1e-9));
  CHECK(b.kl_u == doctest::Approx(kl).epsilon(1e-9));
  CHECK(elbo_shared(s, d).total == doctest::Approx(b.total).epsilon(1e-9));
}

TEST_CASE("per-output noise scaling with zero targets") {
  Rng rng(24);
  InstanceShape shape;
  shape.outputs = 2;
  shape.per_output_noise = true;
  const ModelState s = random_state(rng, shape);
  PerOutputData data = random_per_output_data(rng, shape);
  data.y[1].setZero();
  const double n1 = static_cast<double>(data.y[1].size());
  auto f_at = [&](double scale) {
    ModelState t = s;
    t.noise(1) *= scale;
    return elbo_per_output(t, data).f_term;
  };
  // F(v) = c - n/2 log v + Q/v for the zero-target output: doubling sigma gives Q/4.
  const double shift = 0.5 * n1 * std::log(2.0);
  const double d1 = f_at(1.0) - f_at(2.0) - shift;
  const double d2 = f_at(2.0) - f_at(4.0) - shift;
  CHECK(d1 == doctest::Approx(2.0 * d2).epsilon(1e-9));
}


TEST_CASE("exact marginal with fixed latent coordinates") {
  SUBCASE("scalar datum") {
    ModelState s;
    s.hier.kf = {KernelFamily::RBF, 1.0, Vector::Ones(1)};
    s.hier.kg = {KernelFamily::RBF, 0.0, Vector::Ones(1)};
    s.flat = true;
    s.latent_kernel = {KernelFamily::RBF, 1.0, Vector::Ones(1)};
    s.latent.means = Matrix::Zero(1, 1);
    s.latent.variances = Matrix::Ones(1, 1);
    s.inducing.zx.blocks = {Matrix::Zero(1, 1)};
    s.inducing.zh = Matrix::Zero(1, 1);
    s.inducing.mean = Matrix::Zero(1, 1);
    s.inducing.chol_h = s.inducing.chol_x = Matrix::Ones(1, 1);
    s.noise = Vector::Ones(1);
    SharedInputData d{ReplicaInputs{{Matrix::Zero(1, 1)}}, Matrix::Constant(1, 1, 0.7)};
    const double expected = -0.5 * (0.49 / 2.0 + std::log(2.0 * M_PI * 2.0));
    CHECK(exact_log_marginal_fixed_h(s, d) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("independent outputs decompose") {
    Rng rng(25);
    InstanceShape shape;
    shape.outputs = 2;
    ModelState s = random_state(rng, shape);
    s.latent.means.row(0).setConstant(-100.0);
    s.latent.means.row(1).setConstant(100.0);
    const SharedInputData d = random_shared_data(rng, shape);
    const PerOutputData per = to_per_output(d);
    double sum = 0.0;
    for (Index o = 0; o < 2; ++o) {
      const Matrix k = s.latent_kernel.variance * hier_block_cov(s.hier, d.x, d.x) +
                       s.noise(0) * Matrix::Identity(d.y.rows(), d.y.rows());
      Eigen::LLT<Matrix> llt(k);
      const Vector y = d.y.col(o);
      sum += -0.5 * (y.dot(llt.solve(y)) + 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum() +
                     static_cast<double>(y.size()) * std::log(2 * M_PI));
    }
    CHECK(exact_log_marginal_fixed_h(s, d) == doctest::Approx(sum).epsilon(1e-10));
    CHECK(exact_log_marginal_fixed_h(s, per) == doctest::Approx(sum).epsilon(1e-10));
  }
}

TEST_CASE("bound is tight at the optimum and below the marginal elsewhere") {
  Rng rng(26);
  for (int i = 0; i < 5; ++i) {
    InstanceShape shape;
    shape.outputs = uniform_index(rng, 1, 3);
    shape.replicas = uniform_index(rng, 1, 2);
    shape.points = uniform_index(rng, 2, 3);
    const SharedInputData shared = random_shared_data(rng, shape);
    const ModelState s = fixed_h_state(rng, shape, shared.x);
    const double exact = exact_log_marginal_fixed_h(s, shared);
    CHECK(std::abs(tight_bound(s, shared) - exact) < 1e-5);
    const auto loose = elbo_shared(s, shared);
    CHECK(loose.f_term - loose.kl_u <= exact + 1e-6);

    shape.per_output_noise = true;
    const PerOutputData per = random_per_output_data(rng, shape);
    ModelState sp = fixed_h_state(rng, shape, union_inputs(per));
    const double exact_per = exact_log_marginal_fixed_h(sp, per);
    CHECK(std::abs(tight_bound(sp, per) - exact_per) < 1e-5);
  }
}

TEST_CASE("Kronecker q(U) is tight for one output") {
  Rng rng(27);
  InstanceShape shape;
  shape.outputs = 1;
  shape.replicas = 2;
  shape.points = 3;
  const SharedInputData d = random_shared_data(rng, shape);
  ModelState s = fixed_h_state(rng, shape, d.x);
  const OptimalInducing opt = optimal_inducing_posterior(s, d);
  s.inducing.mean = Eigen::Map<const Matrix>(opt.mean.data(), s.inducing.mx(), 1);
  s.inducing.chol_h = Matrix::Ones(1, 1);
  s.inducing.chol_x = Eigen::LLT<Matrix>(opt.cov).matrixL();
  const auto b = elbo_shared(s, d);
  CHECK(std::abs(b.f_term - b.kl_u - exact_log_marginal_fixed_h(s, d)) < 1e-5);
}

TEST_CASE("naive oracle size guard") {
  Rng rng(28);
  InstanceShape shape;
  shape.mx_per_replica = 51;
  shape.mh = 2;
  const ModelState s = random_state(rng, shape);
  CHECK_THROWS_AS(elbo_naive_oracle(s, random_shared_data(rng, shape)), DimensionError);
}
