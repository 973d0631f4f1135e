#include "doctest.h"
#include "support.hpp"

using namespace hmogp;
using namespace hmogp::testing;

namespace {

ModelState scalar_model() {
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
  return s;
}

}  // namespace

TEST_CASE("pack and unpack round trip") {
  Rng rng(30);
  for (bool flat : {false, true}) {
    InstanceShape shape;
    shape.flat = flat;
    shape.per_output_noise = !flat;
    shape.outputs = 3;
    const ModelState s = random_state(rng, shape);
    FlatParams p = pack(s);
    CHECK(p.span("inducing.chol_x").size == s.inducing.mx() * (s.inducing.mx() + 1) / 2);
    if (flat) CHECK_THROWS(p.span("kg.log_variance"));
    for (int i = 0; i < 500; ++i) {
      p.values = randn(rng, p.size(), 1);
      const FlatParams again = pack(unpack(p, s));
      CHECK((again.values - p.values).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("latent gradient vanishes at the prior") {
  Rng rng(31);
  InstanceShape shape;
  ModelState s = random_state(rng, shape);
  s.latent.means.setZero();
  s.latent.variances.setOnes();
  StateGradient g;
  // Only the KL(q(H)) part: evaluate with no observations for any output.
  PerOutputData empty;
  for (Index d = 0; d < shape.outputs; ++d) {
    ReplicaInputs x;
    for (Index r = 0; r < shape.replicas; ++r) x.blocks.emplace_back(0, shape.input_dim);
    empty.x.push_back(x);
    empty.y.emplace_back(0);
  }
  elbo_with_gradient(s, empty, g);
  CHECK(g.latent_means.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.latent_log_variances.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("noise gradient on one datum") {
  const ModelState s = scalar_model();
  SharedInputData d{ReplicaInputs{{Matrix::Zero(1, 1)}}, Matrix::Constant(1, 1, 1.0)};
  const auto eg = grad_elbo(pack(s), s, d, GradientMode::Analytic);
  // dF/dlog v = -1/2 + E[(y - f)^2] / (2 v), E[(y - f)^2] = 0.25 + 0.25.
  const auto& sp = pack(s).span("noise.log_variance");
  CHECK(eg.grad(sp.offset) == doctest::Approx(-0.5 + 0.5 * 0.5 / 0.25).epsilon(1e-9));
}

TEST_CASE("analytic gradient matches finite differences") {
  Rng rng(32);
  for (int i = 0; i < 10; ++i) {
    InstanceShape shape;
    shape.outputs = uniform_index(rng, 1, 3);
    shape.replicas = uniform_index(rng, 1, 3);
    shape.points = uniform_index(rng, 2, 4);
    shape.mx_per_replica = uniform_index(rng, 1, 2);
    shape.mh = uniform_index(rng, 1, 3);
    shape.input_dim = uniform_index(rng, 1, 2);
    shape.flat = i % 4 == 3;
    shape.family = i % 2 ? KernelFamily::RBF : KernelFamily::Matern32;
    const bool per_output = i % 2 == 0;
    shape.per_output_noise = per_output;
    const ModelState s = random_state(rng, shape);
    const TrainingData data = per_output ? TrainingData(random_per_output_data(rng, shape))
                                         : TrainingData(random_shared_data(rng, shape));
    CHECK(max_fd_gradient_error(s, data) < 1e-4);
  }
}

TEST_CASE("non-finite bound names a span") {
  Rng rng(33);
  InstanceShape shape;
  const ModelState s = random_state(rng, shape);
  FlatParams p = pack(s);
  p.values(p.span("noise.log_variance").offset) = std::numeric_limits<double>::infinity();
  try {
    grad_elbo(p, s, random_shared_data(rng, shape), GradientMode::Analytic);
    FAIL("expected an evaluation error");
  } catch (const EvaluationError& e) {
    CHECK(e.span() == "noise.log_variance");
  }
}

TEST_CASE("adam step") {
  OptimizerConfig c;
  Vector p = Vector::Constant(3, 0.5);
  AdamMoments m;
  adam_step(p, Vector::Zero(3), m, c, 1);
  CHECK(p == Vector::Constant(3, 0.5));

  Vector g(3);
  g << 2.0, -0.5, 1e-3;
  Vector q = Vector::Zero(3);
  AdamMoments m1;
  adam_step(q, g, m1, c, 1);
  for (Index i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2 after one corrected step.
    CHECK(q(i) == doctest::Approx(c.learning_rate * g(i) / (std::abs(g(i)) + c.adam_eps)).epsilon(1e-12));
  }

  Vector r = Vector::Zero(3);
  AdamMoments m2;
  Vector before;
  for (Index t = 1; t <= 5000; ++t) {
    before = r;
    adam_step(r, g, m2, c, t);
  }
  for (Index i = 0; i < 3; ++i) {
    CHECK((r(i) - before(i)) == doctest::Approx(c.learning_rate * (g(i) > 0 ? 1.0 : -1.0)).epsilon(1e-4));
  }
  CHECK_THROWS(adam_step(r, g, m2, c, 0));
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig c;
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = OptimizerConfig();
  c.iterations = 0;
  try {
    c.validate();
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "optimizer.iterations");
  }
}

TEST_CASE("noise-only fit reaches the residual mean square") {
  Rng rng(34);
  InstanceShape shape;
  shape.outputs = 2;
  shape.replicas = 2;
  shape.points = 5;
  const SharedInputData d = random_shared_data(rng, shape);
  ModelState s = random_state(rng, shape);
  // q(U) pinned at zero with negligible spread, Z = data: f = 0 and the residuals are y.
  s.inducing.zx = d.x;
  s.latent.variances.setConstant(1e-10);
  s.inducing.zh = s.latent.means;
  s.inducing.mean = Matrix::Zero(s.inducing.mx(), shape.outputs);
  s.inducing.chol_h = 1e-4 * Matrix::Identity(shape.outputs, shape.outputs);
  s.inducing.chol_x = 1e-4 * Matrix::Identity(s.inducing.mx(), s.inducing.mx());
  OptimizerConfig c;
  c.iterations = 3000;
  c.learning_rate = 0.05;
  c.trainable = {"noise.log_variance"};
  const FitResult r = fit(d, s, c);
  const double expected = d.y.squaredNorm() / static_cast<double>(d.y.size());
  CHECK(r.state.noise(0) == doctest::Approx(expected).epsilon(0.01));
}

TEST_CASE("fit improves the bound, keeps the best state and is deterministic") {
  Rng rng(35);
  InstanceShape shape;
  shape.outputs = 3;
  shape.replicas = 2;
  shape.points = 6;
  const PerOutputData d = random_per_output_data(rng, shape);
  InitConfig init;
  init.inducing_x_per_replica = 3;
  init.seed = 5;
  OptimizerConfig c;
  c.iterations = 200;
  const FitResult a = fit(d, c, init);
  const FitResult b = fit(d, c, init);
  CHECK(a.trace.size() == 201);
  CHECK(a.trace == b.trace);
  CHECK(*std::max_element(a.trace.begin(), a.trace.end()) > a.trace.front());
  for (double v : a.trace) CHECK(std::isfinite(v));
  CHECK(elbo(a.state, d).total == *std::max_element(a.trace.begin(), a.trace.end()));
  CHECK(a.trace[static_cast<std::size_t>(a.best_iteration)] == elbo(a.state, d).total);
}

TEST_CASE("initialization") {
  Rng rng(36);
  InstanceShape shape;
  shape.outputs = 4;
  shape.points = 8;
  const SharedInputData d = random_shared_data(rng, shape);
  InitConfig init;
  init.inducing_x_per_replica = 4;
  init.inducing_h = 3;
  const ModelState s = initialize(to_per_output(d), init);
  CHECK(s.inducing.mx() == 4 * shape.replicas);
  CHECK(s.inducing.mh() == 3);
  CHECK(s.noise.size() == 4);
  CHECK(s.latent.variances.isApproxToConstant(0.5));
  // q(U) mean starts at its optimum for the initial hyperparameters.
  const Vector m_opt = optimal_inducing_posterior(s, to_per_output(d)).mean;
  CHECK((Eigen::Map<const Vector>(s.inducing.mean.data(), m_opt.size()) - m_opt).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(s.inducing.zh.allFinite());
  init.flat = true;
  const ModelState f = initialize(d, init);
  CHECK(f.flat);
  CHECK(f.hier.kg.variance == 0.0);
  CHECK(f.noise.size() == 1);
  init.latent_dim = 0;
  CHECK_THROWS_AS(initialize(d, init), ConfigError);
}
