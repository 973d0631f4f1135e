#include "hmogp/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace hmogp {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

double parse_double(std::string_view s, std::size_t line, const std::string& column) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw SchemaError(line, "column '" + column + "': '" + std::string(s) + "' is not a finite number");
  }
  return v;
}

Index parse_index(std::string_view s, std::size_t line, const std::string& column) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 0) {
    throw SchemaError(line, "column '" + column + "': '" + std::string(s) +
                                "' is not a non-negative integer");
  }
  return static_cast<Index>(v);
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta.json");
}

Matrix sample_inputs(std::mt19937_64& rng, Index n, Index dim) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(n, dim);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < dim; ++j) x(i, j) = u(rng);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a, 0) < x(b, 0); });
  Matrix sorted(n, dim);
  for (Index i = 0; i < n; ++i) sorted.row(i) = x.row(order[static_cast<std::size_t>(i)]);
  return sorted;
}

}  // namespace

Index HierarchicalDataset::replica_count() const {
  return blocks.empty() ? 0 : static_cast<Index>(blocks.front().size());
}

Index HierarchicalDataset::input_dim() const {
  for (const auto& out : blocks)
    for (const auto& b : out) {
      if (b.x.rows() > 0) return b.x.cols();
    }
  return blocks.empty() || blocks.front().empty() ? 0 : blocks.front().front().x.cols();
}

Index HierarchicalDataset::points(Index output) const {
  Index n = 0;
  for (const auto& b : blocks[static_cast<std::size_t>(output)]) n += b.y.size();
  return n;
}

Index HierarchicalDataset::total_points() const {
  Index n = 0;
  for (Index d = 0; d < output_count(); ++d) n += points(d);
  return n;
}

void HierarchicalDataset::validate() const {
  if (blocks.empty()) throw DimensionError("dataset has no outputs");
  const Index r = replica_count();
  const Index v = input_dim();
  if (r < 1) throw DimensionError("dataset has no replicas");
  for (std::size_t d = 0; d < blocks.size(); ++d) {
    if (static_cast<Index>(blocks[d].size()) != r) {
      throw DimensionError("output " + std::to_string(d) + " does not have " + std::to_string(r) + " replicas");
    }
    for (const auto& b : blocks[d]) {
      if (b.x.rows() != b.y.size()) throw DimensionError("block inputs and targets differ in length");
      if (b.x.rows() > 0 && b.x.cols() != v) throw DimensionError("input dimension is not uniform");
      if (!b.x.allFinite() || !b.y.allFinite()) throw DimensionError("non-finite values in dataset");
    }
  }
  if (!meta.scale.empty() &&
      (meta.scale.size() != blocks.size() || meta.offset.size() != blocks.size())) {
    throw DimensionError("standardization constants do not match the output count");
  }
}

ReplicaInputs HierarchicalDataset::inputs(Index output) const {
  ReplicaInputs x;
  const Index v = input_dim();
  for (const auto& b : blocks[static_cast<std::size_t>(output)]) {
    x.blocks.push_back(b.x.rows() > 0 ? b.x : Matrix(0, v));
  }
  return x;
}

Vector HierarchicalDataset::targets(Index output) const {
  Vector y(points(output));
  Index at = 0;
  for (const auto& b : blocks[static_cast<std::size_t>(output)]) {
    y.segment(at, b.y.size()) = b.y;
    at += b.y.size();
  }
  return y;
}

PerOutputData HierarchicalDataset::to_training() const {
  validate();
  PerOutputData out;
  for (Index d = 0; d < output_count(); ++d) {
    out.x.push_back(inputs(d));
    out.y.push_back(targets(d));
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (outputs < 1) throw ConfigError("data.synthetic.outputs", "must be >= 1");
  if (replicas < 1) throw ConfigError("data.synthetic.replicas", "must be >= 1");
  if (points_per_replica < 1) throw ConfigError("data.synthetic.points_per_replica", "must be >= 1");
  if (input_dim < 1) throw ConfigError("data.synthetic.input_dim", "must be >= 1");
  if (latent_dim < 1) throw ConfigError("data.synthetic.latent_dim", "must be >= 1");
  if (kg.input_dim() != input_dim || kf.input_dim() != input_dim) {
    throw ConfigError("data.synthetic.kernels", "lengthscales must match input_dim");
  }
  if (kh.input_dim() != latent_dim) {
    throw ConfigError("data.synthetic.latent_kernel", "lengthscales must match latent_dim");
  }
  if (!(noise >= 0.0)) throw ConfigError("data.synthetic.noise", "must be >= 0");
  if (fixed_latent.size() > 0 && (fixed_latent.rows() != outputs || fixed_latent.cols() != latent_dim)) {
    throw ConfigError("data.synthetic.fixed_latent", "must be outputs x latent_dim");
  }
  HierarchicalKernelSpec{kg, kf}.validate(kg.variance == 0.0);
  kh.validate();
}

HierarchicalDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d_count = spec.outputs;
  const Index r_count = spec.replicas;
  const Index n = spec.points_per_replica;

  Matrix h(d_count, spec.latent_dim);
  if (spec.fixed_latent.size() > 0) {
    h = spec.fixed_latent;
  } else {
    for (Index d = 0; d < d_count; ++d)
      for (Index q = 0; q < spec.latent_dim; ++q) h(d, q) = normal(rng);
  }

  std::vector<Matrix> grids;
  if (spec.shared_inputs) {
    grids.assign(static_cast<std::size_t>(d_count), sample_inputs(rng, n, spec.input_dim));
  } else {
    for (Index d = 0; d < d_count; ++d) grids.push_back(sample_inputs(rng, n, spec.input_dim));
  }

  // Outputs with the same latent point and grid share one draw of f.
  std::vector<Index> canonical(static_cast<std::size_t>(d_count));
  std::vector<Index> unique;
  for (Index d = 0; d < d_count; ++d) {
    canonical[static_cast<std::size_t>(d)] = d;
    for (Index u : unique) {
      if (h.row(u) == h.row(d) && grids[static_cast<std::size_t>(u)] == grids[static_cast<std::size_t>(d)]) {
        canonical[static_cast<std::size_t>(d)] = u;
        break;
      }
    }
    if (canonical[static_cast<std::size_t>(d)] == d) unique.push_back(d);
  }

  const HierarchicalKernelSpec hier{spec.kg, spec.kf};
  const Index per_output = r_count * n;
  const auto u_count = static_cast<Index>(unique.size());
  Matrix hu(u_count, spec.latent_dim);
  for (Index i = 0; i < u_count; ++i) hu.row(i) = h.row(unique[static_cast<std::size_t>(i)]);
  const Matrix kh = latent_cov(spec.kh, hu, hu);

  Vector f_unique;
  if (spec.shared_inputs) {
    ReplicaInputs x;
    x.blocks.assign(static_cast<std::size_t>(r_count), grids.front());
    const Matrix lx = cholesky_jitter(hier_block_cov(hier, x, x)).lower;
    const Matrix lh = cholesky_jitter(kh).lower;
    Vector z(u_count * per_output);
    for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    f_unique = kron_matvec(lh, lx, z);
  } else {
    Matrix cov(u_count * per_output, u_count * per_output);
    for (Index a = 0; a < u_count; ++a) {
      ReplicaInputs xa;
      xa.blocks.assign(static_cast<std::size_t>(r_count), grids[static_cast<std::size_t>(unique[static_cast<std::size_t>(a)])]);
      for (Index b = 0; b <= a; ++b) {
        ReplicaInputs xb;
        xb.blocks.assign(static_cast<std::size_t>(r_count), grids[static_cast<std::size_t>(unique[static_cast<std::size_t>(b)])]);
        const Matrix block = kh(a, b) * hier_block_cov(hier, xa, xb);
        cov.block(a * per_output, b * per_output, per_output, per_output) = block;
        cov.block(b * per_output, a * per_output, per_output, per_output) = block.transpose();
      }
    }
    const Matrix l = cholesky_jitter(cov).lower;
    Vector z(cov.rows());
    for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    f_unique = l.triangularView<Eigen::Lower>() * z;
  }

  HierarchicalDataset data;
  data.blocks.resize(static_cast<std::size_t>(d_count));
  const double noise_sd = std::sqrt(spec.noise);
  for (Index d = 0; d < d_count; ++d) {
    const Index c = canonical[static_cast<std::size_t>(d)];
    const auto pos = std::find(unique.begin(), unique.end(), c) - unique.begin();
    for (Index r = 0; r < r_count; ++r) {
      ReplicaBlock b;
      b.x = grids[static_cast<std::size_t>(d)];
      b.y = f_unique.segment(pos * per_output + r * n, n);
      for (Index i = 0; i < n; ++i) b.y(i) += noise_sd * normal(rng);
      data.blocks[static_cast<std::size_t>(d)].push_back(std::move(b));
    }
    data.meta.output_names.push_back("output_" + std::to_string(d));
  }
  data.meta.true_latent = h;
  std::ostringstream prov;
  prov << "synthetic seed=" << seed << " D=" << d_count << " R=" << r_count << " N=" << n
       << " kg=" << to_string(spec.kg.family) << "(" << format_double(spec.kg.variance) << ")"
       << " kf=" << to_string(spec.kf.family) << "(" << format_double(spec.kf.variance) << ")"
       << " noise=" << format_double(spec.noise);
  data.meta.provenance = prov.str();
  return data;
}

void save_csv(const HierarchicalDataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const Index v = data.input_dim();
  out << "output,replica";
  for (Index j = 0; j < v; ++j) out << ",x_" << j;
  out << ",y\n";
  for (Index d = 0; d < data.output_count(); ++d) {
    for (Index r = 0; r < data.replica_count(); ++r) {
      const auto& b = data.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)];
      for (Index i = 0; i < b.y.size(); ++i) {
        out << d << ',' << r;
        for (Index j = 0; j < v; ++j) out << ',' << format_double(b.x(i, j));
        out << ',' << format_double(b.y(i)) << '\n';
      }
    }
  }
  if (!out) throw Error("failed writing " + path.string());

  json meta;
  meta["outputs"] = data.output_count();
  meta["replicas"] = data.replica_count();
  meta["input_dim"] = v;
  meta["output_names"] = data.meta.output_names;
  meta["offset"] = data.meta.offset;
  meta["scale"] = data.meta.scale;
  meta["provenance"] = data.meta.provenance;
  json latent = json::array();
  for (Index d = 0; d < data.meta.true_latent.rows(); ++d) {
    json r = json::array();
    for (Index q = 0; q < data.meta.true_latent.cols(); ++q) r.push_back(data.meta.true_latent(d, q));
    latent.push_back(r);
  }
  meta["true_latent"] = latent;
  std::ofstream side(sidecar_path(path), std::ios::binary);
  side << meta.dump(2) << '\n';
}

HierarchicalDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw SchemaError(1, "empty file");
  const auto header = split_fields(line);
  if (header.size() < 4 || header[0] != "output" || header[1] != "replica" || header.back() != "y") {
    throw SchemaError(1, "header must be output,replica,x_0[,x_1,...],y");
  }
  const Index v = static_cast<Index>(header.size()) - 3;
  for (Index j = 0; j < v; ++j) {
    if (header[static_cast<std::size_t>(j) + 2] != "x_" + std::to_string(j)) {
      throw SchemaError(1, "expected column x_" + std::to_string(j));
    }
  }

  struct Row {
    Index d, r;
    RowVector x;
    double y;
  };
  std::vector<Row> rows;
  Index d_max = -1, r_max = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    if (static_cast<Index>(f.size()) != v + 3) {
      throw SchemaError(line_no, "expected " + std::to_string(v + 3) + " fields, found " + std::to_string(f.size()));
    }
    Row row{parse_index(f[0], line_no, "output"), parse_index(f[1], line_no, "replica"), RowVector(v), 0.0};
    for (Index j = 0; j < v; ++j) row.x(j) = parse_double(f[static_cast<std::size_t>(j) + 2], line_no, "x_" + std::to_string(j));
    row.y = parse_double(f.back(), line_no, "y");
    d_max = std::max(d_max, row.d);
    r_max = std::max(r_max, row.r);
    rows.push_back(std::move(row));
  }

  HierarchicalDataset data;
  json meta;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream s(side);
    try {
      meta = json::parse(s);
    } catch (const json::exception& e) {
      throw Error("metadata " + side.string() + ": " + e.what());
    }
    d_max = std::max<Index>(d_max, meta.value("outputs", Index{0}) - 1);
    r_max = std::max<Index>(r_max, meta.value("replicas", Index{0}) - 1);
  }
  if (d_max < 0 || r_max < 0) throw SchemaError(line_no, "no observations");

  std::vector<std::vector<std::vector<const Row*>>> grouped(
      static_cast<std::size_t>(d_max + 1), std::vector<std::vector<const Row*>>(static_cast<std::size_t>(r_max + 1)));
  for (const auto& row : rows) grouped[static_cast<std::size_t>(row.d)][static_cast<std::size_t>(row.r)].push_back(&row);
  data.blocks.resize(grouped.size());
  for (std::size_t d = 0; d < grouped.size(); ++d) {
    for (const auto& g : grouped[d]) {
      ReplicaBlock b{Matrix(static_cast<Index>(g.size()), v), Vector(static_cast<Index>(g.size()))};
      for (std::size_t i = 0; i < g.size(); ++i) {
        b.x.row(static_cast<Index>(i)) = g[i]->x;
        b.y(static_cast<Index>(i)) = g[i]->y;
      }
      data.blocks[d].push_back(std::move(b));
    }
  }
  if (!meta.is_null()) {
    data.meta.output_names = meta.value("output_names", std::vector<std::string>{});
    data.meta.offset = meta.value("offset", std::vector<double>{});
    data.meta.scale = meta.value("scale", std::vector<double>{});
    data.meta.provenance = meta.value("provenance", std::string{});
    if (meta.contains("true_latent") && !meta["true_latent"].empty()) {
      const auto& tl = meta["true_latent"];
      data.meta.true_latent.resize(static_cast<Index>(tl.size()), static_cast<Index>(tl[0].size()));
      for (std::size_t d = 0; d < tl.size(); ++d)
        for (std::size_t q = 0; q < tl[d].size(); ++q)
          data.meta.true_latent(static_cast<Index>(d), static_cast<Index>(q)) = tl[d][q].get<double>();
    }
  }
  if (data.meta.output_names.empty()) {
    for (std::size_t d = 0; d < data.blocks.size(); ++d) data.meta.output_names.push_back("output_" + std::to_string(d));
  }
  data.validate();
  return data;
}

HierarchicalDataset standardize(const HierarchicalDataset& data) {
  data.validate();
  HierarchicalDataset out = data;
  const bool already = data.standardized();
  out.meta.offset.assign(data.blocks.size(), 0.0);
  out.meta.scale.assign(data.blocks.size(), 1.0);
  for (Index d = 0; d < data.output_count(); ++d) {
    const Vector y = data.targets(d);
    const auto du = static_cast<std::size_t>(d);
    double offset = 0.0, scale = 1.0;
    if (y.size() > 0) {
      offset = y.mean();
      const double sd = std::sqrt((y.array() - offset).square().mean());
      if (sd > 0.0) scale = sd;
    }
    for (auto& b : out.blocks[du]) b.y = (b.y.array() - offset) / scale;
    // Compose with any earlier standardization so the constants map back to raw units.
    out.meta.offset[du] = already ? data.meta.offset[du] + data.meta.scale[du] * offset : offset;
    out.meta.scale[du] = already ? data.meta.scale[du] * scale : scale;
  }
  return out;
}

SplitPlan random_missing_plan(const HierarchicalDataset& data, std::uint64_t seed) {
  data.validate();
  SplitPlan plan;
  plan.mode = SplitMode::MissingReplica;
  plan.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, data.replica_count() - 1);
  for (Index d = 0; d < data.output_count(); ++d) plan.missing.emplace_back(d, pick(rng));
  return plan;
}

std::pair<HierarchicalDataset, HierarchicalDataset> split(const HierarchicalDataset& data,
                                                          const SplitPlan& plan) {
  data.validate();
  HierarchicalDataset train = data, test = data;
  const Index v = data.input_dim();
  auto empty_block = [&] { return ReplicaBlock{Matrix(0, v), Vector(0)}; };

  if (plan.mode == SplitMode::RandomFraction) {
    if (!(plan.fraction > 0.0 && plan.fraction < 1.0)) throw SplitError("split fraction must lie in (0, 1)");
    std::mt19937_64 rng(plan.seed);
    for (Index d = 0; d < data.output_count(); ++d) {
      for (Index r = 0; r < data.replica_count(); ++r) {
        const auto& b = data.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)];
        const Index n = b.y.size();
        std::vector<Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), Index{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        const Index n_train = n == 0 ? 0 : std::clamp<Index>(std::llround(plan.fraction * static_cast<double>(n)), 1, n);
        std::vector<Index> tr(idx.begin(), idx.begin() + n_train), te(idx.begin() + n_train, idx.end());
        std::sort(tr.begin(), tr.end());
        std::sort(te.begin(), te.end());
        auto take = [&](const std::vector<Index>& rows) {
          ReplicaBlock out{Matrix(static_cast<Index>(rows.size()), v), Vector(static_cast<Index>(rows.size()))};
          for (std::size_t i = 0; i < rows.size(); ++i) {
            out.x.row(static_cast<Index>(i)) = b.x.row(rows[i]);
            out.y(static_cast<Index>(i)) = b.y(rows[i]);
          }
          return out;
        };
        train.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)] = take(tr);
        test.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)] = take(te);
      }
    }
    return {train, test};
  }

  if (plan.missing.empty()) throw SplitError("missing-replica split needs at least one (output, replica) pair");
  for (auto& out : test.blocks)
    for (auto& b : out) b = empty_block();
  for (const auto& [d, r] : plan.missing) {
    if (d < 0 || d >= data.output_count() || r < 0 || r >= data.replica_count()) {
      throw SplitError("missing pair (" + std::to_string(d) + ", " + std::to_string(r) + ") is outside the dataset");
    }
    auto& tr = train.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)];
    test.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)] =
        data.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)];
    tr = empty_block();
  }
  for (Index d = 0; d < data.output_count(); ++d) {
    if (train.points(d) == 0) {
      throw SplitError("output " + std::to_string(d) + " would have no observed replica left for training");
    }
  }
  return {train, test};
}

}  // namespace hmogp
