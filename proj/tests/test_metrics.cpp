#include "doctest.h"
#include "hmogp/metrics.hpp"
#include "support.hpp"

using namespace hmogp;
using namespace hmogp::testing;

TEST_CASE("nmse") {
  Vector y(3), zero = Vector::Zero(3);
  y << 0, 1, 2;
  CHECK(nmse(y, y) == 0.0);
  CHECK(nmse(y, Vector::Constant(3, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(nmse(y, zero) - 2.5) < 1e-12);
  CHECK_THROWS_AS(nmse(Vector::Ones(3), zero), EvaluationError);
  CHECK_THROWS_AS(nmse(y, Vector::Zero(2)), DimensionError);

  Rng rng(60);
  const Vector a = randn(rng, 8, 1), b = randn(rng, 8, 1);
  CHECK(std::abs(nmse(a.array() + 3.7, b.array() + 3.7) - nmse(a, b)) < 1e-12);
}

TEST_CASE("nlpd") {
  Vector y(2);
  y << 0.3, -1.2;
  CHECK(std::abs(nlpd(y, y, Vector::Ones(2)) - 0.5 * std::log(2 * M_PI)) < 1e-12);
  CHECK(std::abs(nlpd(Vector::Ones(1), Vector::Zero(1), Vector::Ones(1)) - 0.5 * (1 + std::log(2 * M_PI))) < 1e-12);
  CHECK(nlpd(Vector::Ones(1), Vector::Zero(1), Vector::Constant(1, 1e300)) > 300.0);
  CHECK_THROWS_AS(nlpd(y, y, Vector::Zero(2)), EvaluationError);

  // Minimized over each variance at the squared residual.
  Rng rng(61);
  const Vector t = randn(rng, 5, 1), m = randn(rng, 5, 1);
  const Vector v = (t - m).cwiseAbs2();
  for (Index i = 0; i < 5; ++i) {
    const double h = 1e-6 * v(i);
    Vector up = v, down = v;
    up(i) += h;
    down(i) -= h;
    CHECK(std::abs((nlpd(t, m, up) - nlpd(t, m, down)) / (2 * h)) * v(i) < 1e-6);
  }
}

TEST_CASE("pooled and per-output report") {
  std::vector<Vector> y{Vector::LinSpaced(4, 0, 3), Vector::LinSpaced(3, 1, 2), Vector::Constant(1, 5.0)};
  std::vector<Vector> var{Vector::Ones(4), Vector::Ones(3), Vector::Ones(1)};
  const EvalReport r = evaluate(y, y, var);
  CHECK(r.nmse == 0.0);
  CHECK(r.n_test == 8);
  CHECK(r.per_output.size() == 3);
  CHECK(r.per_output[0].nmse.value() == 0.0);
  CHECK_FALSE(r.per_output[2].nmse.has_value());
}
