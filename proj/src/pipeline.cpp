#include "hmogp/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hmogp {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Walks one JSON object, remembering which keys were consumed so unknown keys
// can be reported with their full path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "has the wrong type");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(field(item.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

KernelFamily family_field(Section& s, const std::string& key, KernelFamily fallback) {
  std::string name(to_string(fallback));
  s.get(key, name);
  try {
    return kernel_family_from_string(name);
  } catch (const Error&) {
    throw ConfigError(s.field(key), "unknown kernel family '" + name + "' (rbf, matern32)");
  }
}

void read_kernel(Section s, StationaryKernelSpec& k, Index dim) {
  k.family = family_field(s, "family", k.family);
  s.get("variance", k.variance);
  k.lengthscales = Vector::Constant(dim, k.lengthscales.size() > 0 ? k.lengthscales(0) : 1.0);
  if (s.has("lengthscale")) {
    const json& l = s.raw("lengthscale");
    if (l.is_number()) {
      k.lengthscales = Vector::Constant(dim, l.get<double>());
    } else if (l.is_array() && static_cast<Index>(l.size()) == dim) {
      for (Index i = 0; i < dim; ++i) k.lengthscales(i) = l[static_cast<std::size_t>(i)].get<double>();
    } else {
      throw ConfigError(s.field("lengthscale"), "must be a number or an array of length " + std::to_string(dim));
    }
  }
  s.finish();
  if (!(k.variance >= 0.0)) throw ConfigError(s.field("variance"), "must be >= 0");
  if (!(k.lengthscales.array() > 0.0).all()) throw ConfigError(s.field("lengthscale"), "must be > 0");
}

ordered_json kernel_json(const StationaryKernelSpec& k) {
  ordered_json j;
  j["family"] = std::string(to_string(k.family));
  j["variance"] = k.variance;
  j["lengthscale"] = std::vector<double>(k.lengthscales.data(), k.lengthscales.data() + k.lengthscales.size());
  return j;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Matrix matrix_from(const json& j, Index cols_if_empty, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "must be an array of rows");
  if (j.empty()) return Matrix(0, cols_if_empty);
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j[static_cast<std::size_t>(i)].size()) != cols) throw ConfigError(field, "ragged matrix");
    for (Index c = 0; c < cols; ++c) m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json stationary_json(const StationaryKernelSpec& k) {
  json j;
  j["family"] = std::string(to_string(k.family));
  j["variance"] = k.variance;
  j["lengthscales"] = std::vector<double>(k.lengthscales.data(), k.lengthscales.data() + k.lengthscales.size());
  return j;
}

StationaryKernelSpec stationary_from(const json& j) {
  StationaryKernelSpec k;
  k.family = kernel_family_from_string(j.at("family").get<std::string>());
  k.variance = j.at("variance").get<double>();
  const auto l = j.at("lengthscales").get<std::vector<double>>();
  k.lengthscales = Eigen::Map<const Vector>(l.data(), static_cast<Index>(l.size()));
  return k;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json report_json(const EvalReport& r) {
  ordered_json j;
  j["nmse"] = r.nmse;
  j["nlpd"] = r.nlpd;
  j["n_test"] = r.n_test;
  ordered_json per = ordered_json::array();
  for (const auto& s : r.per_output) {
    ordered_json o;
    o["output"] = s.output;
    o["n_test"] = s.n_test;
    o["nmse"] = s.nmse ? ordered_json(*s.nmse) : ordered_json(nullptr);
    o["nlpd"] = s.nlpd;
    per.push_back(o);
  }
  j["per_output"] = per;
  return j;
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds", "needs at least one seed");
  if (data.source == DataConfig::Source::Csv && data.csv_path.empty()) {
    throw ConfigError("data.csv_path", "required when data.source is csv");
  }
  if (data.source == DataConfig::Source::Synthetic) data.synthetic.validate();
  if (split.mode == SplitMode::RandomFraction && !(split.fraction > 0.0 && split.fraction < 1.0)) {
    throw ConfigError("split.fraction", "must lie in (0, 1)");
  }
  model.validate();
  optimizer.validate();
  if (prediction.mc_samples < 1) throw ConfigError("prediction.mc_samples", "must be >= 1");
}

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.get("seed", c.seed);
  top.get("seeds", c.seeds);

  {
    Section d = top.sub("data");
    std::string source = "synthetic";
    d.get("source", source);
    if (source == "synthetic") {
      c.data.source = DataConfig::Source::Synthetic;
    } else if (source == "csv") {
      c.data.source = DataConfig::Source::Csv;
    } else {
      throw ConfigError("data.source", "must be 'synthetic' or 'csv'");
    }
    std::string path;
    d.get("csv_path", path);
    c.data.csv_path = path;
    d.get("standardize", c.data.standardize);
    Section s = d.sub("synthetic");
    auto& sp = c.data.synthetic;
    s.get("outputs", sp.outputs);
    s.get("replicas", sp.replicas);
    s.get("points_per_replica", sp.points_per_replica);
    s.get("input_dim", sp.input_dim);
    s.get("latent_dim", sp.latent_dim);
    s.get("noise", sp.noise);
    s.get("shared_inputs", sp.shared_inputs);
    read_kernel(s.sub("kg"), sp.kg, sp.input_dim);
    read_kernel(s.sub("kf"), sp.kf, sp.input_dim);
    read_kernel(s.sub("latent_kernel"), sp.kh, sp.latent_dim);
    s.finish();
    d.finish();
  }
  {
    Section s = top.sub("split");
    std::string mode = "random_fraction";
    s.get("mode", mode);
    if (mode == "random_fraction") {
      c.split.mode = SplitMode::RandomFraction;
    } else if (mode == "missing_replica") {
      c.split.mode = SplitMode::MissingReplica;
    } else {
      throw ConfigError("split.mode", "must be 'random_fraction' or 'missing_replica'");
    }
    s.get("fraction", c.split.fraction);
    std::vector<std::vector<Index>> missing;
    s.get("missing", missing);
    for (const auto& p : missing) {
      if (p.size() != 2) throw ConfigError("split.missing", "entries must be [output, replica]");
      c.split.missing.emplace_back(p[0], p[1]);
    }
    s.finish();
  }
  {
    Section m = top.sub("model");
    m.get("latent_dim", c.model.latent_dim);
    m.get("inducing_h", c.model.inducing_h);
    m.get("inducing_x_per_replica", c.model.inducing_x_per_replica);
    c.model.kg_family = family_field(m, "kg_family", c.model.kg_family);
    c.model.kf_family = family_field(m, "kf_family", c.model.kf_family);
    m.get("flat", c.model.flat);
    m.get("per_output_noise", c.model.per_output_noise);
    m.get("latent_variance", c.model.latent_variance);
    m.finish();
  }
  {
    Section o = top.sub("optimizer");
    auto& op = c.optimizer;
    o.get("learning_rate", op.learning_rate);
    o.get("iterations", op.iterations);
    o.get("adam_beta1", op.adam_beta1);
    o.get("adam_beta2", op.adam_beta2);
    o.get("adam_eps", op.adam_eps);
    std::string mode = "analytic";
    o.get("gradient_mode", mode);
    if (mode == "analytic") {
      op.gradient_mode = GradientMode::Analytic;
    } else if (mode == "numeric") {
      op.gradient_mode = GradientMode::Numeric;
    } else {
      throw ConfigError("optimizer.gradient_mode", "must be 'analytic' or 'numeric'");
    }
    o.get("fd_step", op.fd_step);
    o.get("trainable", op.trainable);
    o.get("plateau_window", op.plateau_window);
    o.get("verbose", op.verbose);
    o.finish();
  }
  {
    Section p = top.sub("prediction");
    p.get("mc_samples", c.prediction.mc_samples);
    p.get("include_noise", c.prediction.include_noise);
    p.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("--config", "file not found: " + path.string());
  return parse_config(read_text(path));
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  ordered_json data;
  data["source"] = c.data.source == DataConfig::Source::Csv ? "csv" : "synthetic";
  data["csv_path"] = c.data.csv_path.string();
  data["standardize"] = c.data.standardize;
  const auto& sp = c.data.synthetic;
  ordered_json syn;
  syn["outputs"] = sp.outputs;
  syn["replicas"] = sp.replicas;
  syn["points_per_replica"] = sp.points_per_replica;
  syn["input_dim"] = sp.input_dim;
  syn["latent_dim"] = sp.latent_dim;
  syn["noise"] = sp.noise;
  syn["shared_inputs"] = sp.shared_inputs;
  syn["kg"] = kernel_json(sp.kg);
  syn["kf"] = kernel_json(sp.kf);
  syn["latent_kernel"] = kernel_json(sp.kh);
  data["synthetic"] = syn;
  j["data"] = data;
  ordered_json split;
  split["mode"] = c.split.mode == SplitMode::MissingReplica ? "missing_replica" : "random_fraction";
  split["fraction"] = c.split.fraction;
  ordered_json missing = ordered_json::array();
  for (const auto& [d, r] : c.split.missing) missing.push_back({d, r});
  split["missing"] = missing;
  j["split"] = split;
  ordered_json model;
  model["latent_dim"] = c.model.latent_dim;
  model["inducing_h"] = c.model.inducing_h;
  model["inducing_x_per_replica"] = c.model.inducing_x_per_replica;
  model["kg_family"] = std::string(to_string(c.model.kg_family));
  model["kf_family"] = std::string(to_string(c.model.kf_family));
  model["flat"] = c.model.flat;
  model["per_output_noise"] = c.model.per_output_noise;
  model["latent_variance"] = c.model.latent_variance;
  j["model"] = model;
  ordered_json opt;
  opt["learning_rate"] = c.optimizer.learning_rate;
  opt["iterations"] = c.optimizer.iterations;
  opt["adam_beta1"] = c.optimizer.adam_beta1;
  opt["adam_beta2"] = c.optimizer.adam_beta2;
  opt["adam_eps"] = c.optimizer.adam_eps;
  opt["gradient_mode"] = c.optimizer.gradient_mode == GradientMode::Numeric ? "numeric" : "analytic";
  opt["fd_step"] = c.optimizer.fd_step;
  opt["trainable"] = c.optimizer.trainable;
  opt["plateau_window"] = c.optimizer.plateau_window;
  opt["verbose"] = c.optimizer.verbose;
  j["optimizer"] = opt;
  ordered_json pred;
  pred["mc_samples"] = c.prediction.mc_samples;
  pred["include_noise"] = c.prediction.include_noise;
  j["prediction"] = pred;
  return j.dump(2);
}

std::string model_to_json(const ModelState& s) {
  json j;
  j["flat"] = s.flat;
  j["base_jitter"] = s.base_jitter;
  j["kg"] = stationary_json(s.hier.kg);
  j["kf"] = stationary_json(s.hier.kf);
  j["kh"] = stationary_json(s.latent_kernel);
  j["latent"] = {{"means", matrix_json(s.latent.means)}, {"variances", matrix_json(s.latent.variances)}};
  json zx = json::array();
  for (const auto& b : s.inducing.zx.blocks) zx.push_back(matrix_json(b));
  j["inducing"] = {{"zx", zx},
                   {"zh", matrix_json(s.inducing.zh)},
                   {"mean", matrix_json(s.inducing.mean)},
                   {"chol_h", matrix_json(s.inducing.chol_h)},
                   {"chol_x", matrix_json(s.inducing.chol_x)}};
  j["noise"] = std::vector<double>(s.noise.data(), s.noise.data() + s.noise.size());
  return j.dump(1);
}

ModelState model_from_json(const std::string& text) {
  ModelState s;
  try {
    const json j = json::parse(text);
    s.flat = j.at("flat").get<bool>();
    s.base_jitter = j.at("base_jitter").get<double>();
    s.hier.kg = stationary_from(j.at("kg"));
    s.hier.kf = stationary_from(j.at("kf"));
    s.latent_kernel = stationary_from(j.at("kh"));
    const Index v = s.hier.kf.input_dim();
    s.latent.means = matrix_from(j.at("latent").at("means"), 0, "latent.means");
    s.latent.variances = matrix_from(j.at("latent").at("variances"), 0, "latent.variances");
    const auto& ind = j.at("inducing");
    for (const auto& b : ind.at("zx")) s.inducing.zx.blocks.push_back(matrix_from(b, v, "inducing.zx"));
    s.inducing.zh = matrix_from(ind.at("zh"), 0, "inducing.zh");
    s.inducing.mean = matrix_from(ind.at("mean"), 0, "inducing.mean");
    s.inducing.chol_h = matrix_from(ind.at("chol_h"), 0, "inducing.chol_h");
    s.inducing.chol_x = matrix_from(ind.at("chol_x"), 0, "inducing.chol_x");
    const auto noise = j.at("noise").get<std::vector<double>>();
    s.noise = Eigen::Map<const Vector>(noise.data(), static_cast<Index>(noise.size()));
  } catch (const json::exception& e) {
    throw Error(std::string("model file: ") + e.what());
  }
  s.validate();
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over a stream-offset state.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

HierarchicalDataset make_dataset(const RunConfig& config, std::uint64_t seed) {
  HierarchicalDataset data = config.data.source == DataConfig::Source::Csv
                                 ? load_csv(config.data.csv_path)
                                 : generate_synthetic(config.data.synthetic, derive_seed(seed, 1));
  return config.data.standardize ? standardize(data) : data;
}

std::pair<HierarchicalDataset, HierarchicalDataset> make_split(const HierarchicalDataset& data,
                                                               const RunConfig& config,
                                                               std::uint64_t seed) {
  const std::uint64_t split_seed = derive_seed(seed, 2);
  SplitPlan plan;
  plan.seed = split_seed;
  plan.mode = config.split.mode;
  plan.fraction = config.split.fraction;
  if (plan.mode == SplitMode::MissingReplica) {
    plan = config.split.missing.empty() ? random_missing_plan(data, split_seed) : plan;
    if (!config.split.missing.empty()) plan.missing = config.split.missing;
  }
  return split(data, plan);
}

PredictionTable predict_dataset(const ModelState& state, const HierarchicalDataset& points,
                                const PredictionConfig& config, std::uint64_t seed) {
  points.validate();
  if (points.output_count() > state.output_count()) {
    throw DimensionError("prediction points name output " + std::to_string(points.output_count() - 1) +
                         ", model has " + std::to_string(state.output_count()) + " outputs");
  }
  PredictionTable t;
  const Index total = points.total_points();
  t.x.resize(total, state.input_dim());
  t.mean.resize(total);
  t.variance.resize(total);
  Index at = 0;
  for (Index d = 0; d < points.output_count(); ++d) {
    const Index n = points.points(d);
    if (n == 0) continue;
    const TaggedInputs xs = TaggedInputs::from_replicas(points.inputs(d));
    const PredictiveMoments m = predict_marginal(state, xs, d, config.mc_samples,
                                                 derive_seed(seed, 100 + static_cast<std::uint64_t>(d)),
                                                 config.include_noise);
    t.x.middleRows(at, n) = xs.points;
    t.mean.segment(at, n) = m.mean;
    t.variance.segment(at, n) = m.variance;
    for (Index i = 0; i < n; ++i) {
      t.output.push_back(d);
      t.replica.push_back(xs.replica[static_cast<std::size_t>(i)]);
    }
    at += n;
  }
  return t;
}

EvalReport evaluate_table(const PredictionTable& table, const HierarchicalDataset& truth) {
  truth.validate();
  if (static_cast<Index>(table.output.size()) != truth.total_points()) {
    throw DimensionError("predictions have " + std::to_string(table.output.size()) + " rows, truth has " +
                         std::to_string(truth.total_points()));
  }
  std::vector<Vector> y, m, v;
  Index row = 0;
  for (Index d = 0; d < truth.output_count(); ++d) {
    const Index n = truth.points(d);
    y.push_back(truth.targets(d));
    m.emplace_back(n);
    v.emplace_back(n);
    Index k = 0;
    for (Index r = 0; r < truth.replica_count(); ++r) {
      const auto& b = truth.blocks[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)];
      for (Index i = 0; i < b.y.size(); ++i, ++row, ++k) {
        const auto ru = static_cast<std::size_t>(row);
        if (table.output[ru] != d || table.replica[ru] != r ||
            (table.x.row(row) - b.x.row(i)).cwiseAbs().maxCoeff() > 1e-12) {
          throw DimensionError("prediction row " + std::to_string(row) + " does not match the truth point");
        }
        m.back()(k) = table.mean(row);
        v.back()(k) = table.variance(row);
      }
    }
  }
  return evaluate(y, m, v);
}

void write_predictions_csv(const PredictionTable& t, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "output,replica";
  for (Index j = 0; j < t.x.cols(); ++j) out << ",x_" << j;
  out << ",mean,variance\n";
  for (Index i = 0; i < t.mean.size(); ++i) {
    out << t.output[static_cast<std::size_t>(i)] << ',' << t.replica[static_cast<std::size_t>(i)];
    for (Index j = 0; j < t.x.cols(); ++j) out << ',' << fmt(t.x(i, j));
    out << ',' << fmt(t.mean(i)) << ',' << fmt(t.variance(i)) << '\n';
  }
  write_text(path, out.str());
}

PredictionTable read_predictions_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(1, "empty predictions file");
  Index fields = 1;
  for (char ch : line) fields += ch == ',';
  const Index v = fields - 4;
  if (v < 1 || line.rfind("output,replica", 0) != 0 || line.find(",mean,variance") == std::string::npos) {
    throw SchemaError(1, "header must be output,replica,x_0[,...],mean,variance");
  }
  PredictionTable t;
  std::vector<double> xs, ms, vs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (static_cast<Index>(f.size()) != fields) throw SchemaError(line_no, "wrong number of fields");
    try {
      t.output.push_back(std::stoll(f[0]));
      t.replica.push_back(std::stoll(f[1]));
      for (Index j = 0; j < v; ++j) xs.push_back(std::stod(f[static_cast<std::size_t>(2 + j)]));
      ms.push_back(std::stod(f[f.size() - 2]));
      vs.push_back(std::stod(f.back()));
    } catch (const std::exception&) {
      throw SchemaError(line_no, "non-numeric field");
    }
  }
  const auto n = static_cast<Index>(ms.size());
  t.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xs.data(), n, v);
  t.mean = Eigen::Map<const Vector>(ms.data(), n);
  t.variance = Eigen::Map<const Vector>(vs.data(), n);
  return t;
}

void write_metrics(const EvalReport& report, const std::filesystem::path& json_path,
                   const std::filesystem::path& csv_path) {
  write_text(json_path, report_json(report).dump(2) + "\n");
  std::ostringstream csv;
  csv << "scope,output,n_test,nmse,nlpd\n";
  csv << "pooled,," << report.n_test << ',' << fmt(report.nmse) << ',' << fmt(report.nlpd) << '\n';
  for (const auto& s : report.per_output) {
    csv << "output," << s.output << ',' << s.n_test << ',' << (s.nmse ? fmt(*s.nmse) : std::string()) << ','
        << fmt(s.nlpd) << '\n';
  }
  write_text(csv_path, csv.str());
}

void write_trace_csv(const std::vector<double>& trace, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "iteration,elbo\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << fmt(trace[i]) << '\n';
  write_text(path, out.str());
}

RunResult run_once(const RunConfig& config, std::uint64_t seed, const std::filesystem::path& out) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const HierarchicalDataset data = make_dataset(config, seed);
  const auto [train, test] = make_split(data, config, seed);

  InitConfig init = config.model;
  init.seed = derive_seed(seed, 3);
  OptimizerConfig opt = config.optimizer;
  opt.seed = derive_seed(seed, 4);

  RunResult result;
  result.fit = fit(train.to_training(), opt, init);
  const PredictionTable table = predict_dataset(result.fit.state, test, config.prediction, derive_seed(seed, 5));
  result.report = evaluate_table(table, test);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    save_csv(data, out / "data.csv");
    save_csv(train, out / "train.csv");
    save_csv(test, out / "test.csv");
    write_text(out / "model.json", model_to_json(result.fit.state) + "\n");
    write_trace_csv(result.fit.trace, out / "trace.csv");
    write_predictions_csv(table, out / "predictions.csv");
    write_metrics(result.report, out / "metrics.json", out / "metrics.csv");
    ordered_json manifest;
    manifest["software_version"] = kSoftwareVersion;
    manifest["seed"] = seed;
    manifest["derived_seeds"] = {{"data", derive_seed(seed, 1)}, {"split", derive_seed(seed, 2)},
                                 {"init", init.seed}, {"prediction", derive_seed(seed, 5)}};
    manifest["config"] = ordered_json::parse(config_to_json(config));
    manifest["dataset"] = data.meta.provenance;
    manifest["jitter_events"] = result.fit.jitter_events;
    manifest["recovered_step_failures"] = result.fit.recovered_failures;
    manifest["initial_elbo"] = result.fit.trace.front();
    manifest["final_elbo"] = result.fit.trace.back();
    manifest["best_elbo"] = result.fit.trace[static_cast<std::size_t>(result.fit.best_iteration)];
    manifest["best_iteration"] = result.fit.best_iteration;
    manifest["wall_clock_seconds"] = result.seconds;
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
  }
  return result;
}

ExperimentSummary run_experiment(const RunConfig& config, const std::filesystem::path& out) {
  config.validate();
  ExperimentSummary summary;
  std::vector<double> nmses, nlpds;
  for (std::uint64_t s : config.seeds) {
    const auto dir = out.empty() ? std::filesystem::path() : out / ("seed_" + std::to_string(s));
    const RunResult r = run_once(config, s, dir);
    summary.seeds.push_back(s);
    summary.reports.push_back(r.report);
    nmses.push_back(r.report.nmse);
    nlpds.push_back(r.report.nlpd);
  }
  auto mean = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
  };
  summary.nmse_mean = mean(nmses);
  summary.nmse_sd = sample_sd(nmses);
  summary.nlpd_mean = mean(nlpds);
  summary.nlpd_sd = sample_sd(nlpds);

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    ordered_json j;
    j["seeds"] = summary.seeds;
    j["flat_ablation"] = config.model.flat;
    j["nmse"] = {{"mean", summary.nmse_mean}, {"sd", summary.nmse_sd}, {"values", nmses}};
    j["nlpd"] = {{"mean", summary.nlpd_mean}, {"sd", summary.nlpd_sd}, {"values", nlpds}};
    write_text(out / "summary.json", j.dump(2) + "\n");
    std::ostringstream csv;
    csv << "seed,nmse,nlpd\n";
    for (std::size_t i = 0; i < nmses.size(); ++i) {
      csv << summary.seeds[i] << ',' << fmt(nmses[i]) << ',' << fmt(nlpds[i]) << '\n';
    }
    csv << "mean," << fmt(summary.nmse_mean) << ',' << fmt(summary.nlpd_mean) << '\n';
    csv << "sd," << fmt(summary.nmse_sd) << ',' << fmt(summary.nlpd_sd) << '\n';
    write_text(out / "summary.csv", csv.str());
  }
  return summary;
}

}  // namespace hmogp
