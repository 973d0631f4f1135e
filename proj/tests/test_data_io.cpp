#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hmogp/data_io.hpp"
#include "support.hpp"

using namespace hmogp;
using namespace hmogp::testing;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "hmogp_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

bool same(const HierarchicalDataset& a, const HierarchicalDataset& b, double tol) {
  if (a.output_count() != b.output_count() || a.replica_count() != b.replica_count()) return false;
  for (Index d = 0; d < a.output_count(); ++d)
    for (Index r = 0; r < a.replica_count(); ++r) {
      const auto& x = a.blocks[d][r];
      const auto& y = b.blocks[d][r];
      if (x.y.size() != y.y.size()) return false;
      if (x.y.size() == 0) continue;
      if ((x.x - y.x).cwiseAbs().maxCoeff() > tol || (x.y - y.y).cwiseAbs().maxCoeff() > tol) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("synthetic defaults") {
  const auto data = generate_synthetic(SyntheticSpec(), 1);
  CHECK(data.output_count() == 50);
  CHECK(data.replica_count() == 3);
  CHECK(data.input_dim() == 1);
  CHECK(data.meta.true_latent.cols() == 2);
  for (Index d = 0; d < 50; ++d) CHECK(data.points(d) == 30);
  CHECK(same(data, generate_synthetic(SyntheticSpec(), 1), 0.0));
  // Replicas of one output share the output's inputs; outputs differ.
  CHECK(data.blocks[0][0].x == data.blocks[0][2].x);
  CHECK(data.blocks[0][0].x != data.blocks[1][0].x);
}

TEST_CASE("identical latent points and inputs give identical functions") {
  {
    SyntheticSpec spec;
    spec.outputs = 3;
    spec.noise = 0.0;
    spec.shared_inputs = true;
    spec.fixed_latent = Matrix::Zero(3, 2);
    spec.fixed_latent(2, 0) = 1.0;
    const auto data = generate_synthetic(spec, 4);
    for (Index r = 0; r < 3; ++r) {
      CHECK(data.blocks[0][r].y == data.blocks[1][r].y);
      CHECK(data.blocks[0][r].y != data.blocks[2][r].y);
    }
  }
}

TEST_CASE("synthetic moments match the kernel") {
  SyntheticSpec spec;
  spec.outputs = 4;
  spec.replicas = 2;
  spec.points_per_replica = 3;
  const double expected = spec.kh.variance * (spec.kf.variance + spec.kg.variance) + spec.noise;
  std::vector<double> per_seed;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto d = generate_synthetic(spec, seed);
    double ss = 0.0;
    Index n = 0;
    for (Index o = 0; o < d.output_count(); ++o) {
      const Vector y = d.targets(o);
      ss += y.squaredNorm();
      n += y.size();
    }
    per_seed.push_back(ss / static_cast<double>(n));
  }
  const Vector v = Eigen::Map<const Vector>(per_seed.data(), 50);
  const double se = std::sqrt((v.array() - v.mean()).square().sum() / 49.0 / 50.0);
  CHECK(std::abs(v.mean() - expected) < 3.0 * se);
}

TEST_CASE("synthetic cross-replica correlation on a fixed grid") {
  // Shared 3-point grid, one output: sample covariance of (replica 0, replica 1)
  // at the same input converges to k_g(0) * v_H, within replica to (k_g + k_f)(0) * v_H.
  SyntheticSpec spec;
  spec.outputs = 1;
  spec.replicas = 2;
  spec.points_per_replica = 3;
  spec.noise = 0.0;
  spec.shared_inputs = true;
  std::vector<double> cross, within;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto d = generate_synthetic(spec, 100 + seed);
    cross.push_back(d.blocks[0][0].y(1) * d.blocks[0][1].y(1));
    within.push_back(d.blocks[0][0].y(1) * d.blocks[0][0].y(1));
  }
  auto check = [](const std::vector<double>& v, double target) {
    const Vector x = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
    const double se = std::sqrt((x.array() - x.mean()).square().sum() / (x.size() - 1.0) / x.size());
    CHECK(std::abs(x.mean() - target) < 5.0 * se);
  };
  check(cross, 0.1);
  check(within, 1.1);
}

TEST_CASE("csv round trip and schema") {
  SyntheticSpec spec;
  spec.outputs = 3;
  spec.replicas = 2;
  spec.points_per_replica = 4;
  spec.input_dim = 2;
  spec.kg.lengthscales = spec.kf.lengthscales = Vector::Ones(2);
  auto data = generate_synthetic(spec, 9);
  data.blocks[1][1] = {Matrix(0, 2), Vector(0)};
  const auto path = temp_file("roundtrip.csv");
  save_csv(data, path);
  const auto back = load_csv(path);
  CHECK(same(data, back, 0.0));
  CHECK(back.meta.true_latent == data.meta.true_latent);
  CHECK(back.meta.provenance == data.meta.provenance);

  const auto plain = temp_file("plain.csv");
  {
    std::ofstream f(plain);
    f << "output,replica,x_0,y\n0,0,0.1,1\n0,2,0.2,2\n1,1,0.3,3\n";
  }
  std::filesystem::remove(plain.string() + ".meta.json");
  const auto p = load_csv(plain);
  CHECK(p.output_count() == 2);
  CHECK(p.replica_count() == 3);
  CHECK(p.points(0) == 2);

  const auto bad = temp_file("bad.csv");
  {
    std::ofstream f(bad);
    f << "output,replica,x_0,y\n0,0,0.1,1\n0,1,abc,2\n";
  }
  try {
    load_csv(bad);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.line() == 3);
  }
  {
    std::ofstream f(bad);
    f << "output,replica,x_0,y\n0,0,0.1\n";
  }
  CHECK_THROWS_AS(load_csv(bad), SchemaError);
  {
    std::ofstream f(bad);
    f << "out,replica,x_0,y\n";
  }
  CHECK_THROWS_AS(load_csv(bad), SchemaError);
}

TEST_CASE("gene-shaped ragged data is accepted") {
  const auto path = temp_file("gene.csv");
  std::filesystem::remove(path.string() + ".meta.json");
  Rng rng(50);
  {
    std::ofstream f(path);
    f << "output,replica,x_0,y\n";
    for (int d = 0; d < 4; ++d)
      for (int r = 0; r < 8; ++r) {
        const Index n = uniform_index(rng, 6, 10);
        for (Index t = 0; t < n; ++t) f << d << ',' << r << ',' << t << ',' << uniform_scalar(rng, -1, 1) << '\n';
      }
  }
  const auto data = load_csv(path);
  CHECK(data.output_count() == 4);
  CHECK(data.replica_count() == 8);
  const auto std_data = standardize(data);
  for (Index d = 0; d < 4; ++d) {
    const Vector y = std_data.targets(d);
    CHECK(std::abs(y.mean()) < 1e-12);
    CHECK(std::sqrt((y.array() - y.mean()).square().mean()) == doctest::Approx(1.0));
    const Vector raw = data.targets(d);
    CHECK(((y * std_data.meta.scale[d]).array() + std_data.meta.offset[d] - raw.array()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("splits") {
  SyntheticSpec spec;
  spec.outputs = 4;
  spec.replicas = 3;
  const auto data = generate_synthetic(spec, 2);

  SplitPlan half;
  half.seed = 3;
  const auto [train, test] = split(data, half);
  for (Index d = 0; d < 4; ++d)
    for (Index r = 0; r < 3; ++r) {
      CHECK(train.blocks[d][r].y.size() == 5);
      CHECK(test.blocks[d][r].y.size() == 5);
      std::vector<double> all(train.blocks[d][r].y.data(), train.blocks[d][r].y.data() + 5);
      all.insert(all.end(), test.blocks[d][r].y.data(), test.blocks[d][r].y.data() + 5);
      std::sort(all.begin(), all.end());
      std::vector<double> orig(data.blocks[d][r].y.data(), data.blocks[d][r].y.data() + 10);
      std::sort(orig.begin(), orig.end());
      CHECK(all == orig);
    }
  const auto again = split(data, half);
  CHECK(same(again.first, train, 0.0));
  CHECK(same(again.second, test, 0.0));

  SplitPlan missing;
  missing.mode = SplitMode::MissingReplica;
  missing.missing = {{0, 1}};
  const auto [tr, te] = split(data, missing);
  CHECK(tr.blocks[0][1].y.size() == 0);
  CHECK(te.blocks[0][1].y == data.blocks[0][1].y);
  CHECK(te.blocks[0][0].y.size() == 0);
  CHECK(tr.blocks[2][1].y == data.blocks[2][1].y);

  missing.missing = {{0, 0}, {0, 1}, {0, 2}};
  CHECK_THROWS_AS(split(data, missing), SplitError);
  half.fraction = 1.0;
  CHECK_THROWS_AS(split(data, half), SplitError);

  const SplitPlan plan = random_missing_plan(data, 8);
  CHECK(plan.missing.size() == 4);
  CHECK(random_missing_plan(data, 8).missing == plan.missing);
}
