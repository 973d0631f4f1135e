#include "hmogp/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>

namespace hmogp {

namespace {

constexpr Index kSmoothingReferencePoints = 20;

// Sequential writer/reader over the flat layout so pack, unpack and
// pack_gradient cannot drift apart.
class Packer {
 public:
  void add(const std::string& name, const Vector& v) {
    layout_.push_back({name, static_cast<Index>(values_.size()), v.size()});
    values_.insert(values_.end(), v.data(), v.data() + v.size());
  }

  FlatParams finish() {
    FlatParams p;
    p.values = Eigen::Map<const Vector>(values_.data(), static_cast<Index>(values_.size()));
    p.layout = std::move(layout_);
    return p;
  }

 private:
  std::vector<double> values_;
  std::vector<ParamSpan> layout_;
};

Vector chol_to_flat(const Matrix& l, bool log_diag) {
  const Index n = l.rows();
  Vector out(n * (n + 1) / 2);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) out(k++) = l(i, j);
  for (Index i = 0; i < n; ++i) out(k++) = log_diag ? std::log(l(i, i)) : l(i, i);
  return out;
}

Matrix chol_from_flat(const Vector& v, Index n) {
  Matrix l = Matrix::Zero(n, n);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) l(i, j) = v(k++);
  for (Index i = 0; i < n; ++i) l(i, i) = std::exp(v(k++));
  return l;
}

Vector log_of(const Vector& v) { return v.array().log().matrix(); }
Vector exp_of(const Vector& v) { return v.array().exp().matrix(); }

template <typename Visitor>
void visit_layout(const ModelState& s, Visitor&& add) {
  if (!s.flat) {
    add("kg.log_variance", Vector::Constant(1, std::log(s.hier.kg.variance)));
    add("kg.log_lengthscales", log_of(s.hier.kg.lengthscales));
  }
  add("kf.log_variance", Vector::Constant(1, std::log(s.hier.kf.variance)));
  add("kf.log_lengthscales", log_of(s.hier.kf.lengthscales));
  add("kh.log_variance", Vector::Constant(1, std::log(s.latent_kernel.variance)));
  add("kh.log_lengthscales", log_of(s.latent_kernel.lengthscales));
  add("latent.means", Vector(Eigen::Map<const Vector>(s.latent.means.data(), s.latent.means.size())));
  const Matrix lv = s.latent.variances.array().log().matrix();
  add("latent.log_variances", Vector(Eigen::Map<const Vector>(lv.data(), lv.size())));
  Vector zx(s.inducing.mx() * s.input_dim());
  Index at = 0;
  for (const auto& b : s.inducing.zx.blocks) {
    zx.segment(at, b.size()) = Eigen::Map<const Vector>(b.data(), b.size());
    at += b.size();
  }
  add("inducing.zx", zx);
  add("inducing.zh", Vector(Eigen::Map<const Vector>(s.inducing.zh.data(), s.inducing.zh.size())));
  add("inducing.mean", Vector(Eigen::Map<const Vector>(s.inducing.mean.data(), s.inducing.mean.size())));
  add("inducing.chol_h", chol_to_flat(s.inducing.chol_h, true));
  add("inducing.chol_x", chol_to_flat(s.inducing.chol_x, true));
  add("noise.log_variance", log_of(s.noise));
}

Matrix reshape(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

double elbo_value(const FlatParams& p, const ModelState& shape, const TrainingData& data) {
  try {
    return elbo(unpack(p, shape), data).total;
  } catch (const IndefiniteMatrixError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// Span blamed for a non-finite bound: a non-finite coordinate if any, else the
// coordinate of largest magnitude.
std::string blame(const FlatParams& p) {
  Index worst = 0;
  for (Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p.values(i))) return p.span_of(i);
    if (std::abs(p.values(i)) > std::abs(p.values(worst))) worst = i;
  }
  return p.size() > 0 ? p.span_of(worst) : std::string();
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 1.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(v.size());
  return var > 0.0 ? var : 1.0;
}

std::vector<const ReplicaInputs*> inputs_per_output(const TrainingData& data) {
  std::vector<const ReplicaInputs*> out;
  if (const auto* s = std::get_if<SharedInputData>(&data)) {
    out.assign(static_cast<std::size_t>(s->y.cols()), &s->x);
  } else {
    for (const auto& x : std::get<PerOutputData>(data).x) out.push_back(&x);
  }
  return out;
}

bool same_inputs(const ReplicaInputs& a, const ReplicaInputs& b) {
  if (a.replica_count() != b.replica_count()) return false;
  for (std::size_t r = 0; r < a.blocks.size(); ++r) {
    if (a.blocks[r].rows() != b.blocks[r].rows() || a.blocks[r].cols() != b.blocks[r].cols()) return false;
    if (a.blocks[r] != b.blocks[r]) return false;
  }
  return true;
}

// Targets as a D x n matrix when every output is observed on the same inputs.
std::optional<Matrix> common_grid_targets(const TrainingData& data) {
  if (const auto* s = std::get_if<SharedInputData>(&data)) return Matrix(s->y.transpose());
  const auto& per = std::get<PerOutputData>(data);
  for (const auto& x : per.x) {
    if (!same_inputs(x, per.x.front())) return std::nullopt;
  }
  const Index n = per.y.front().size();
  if (n < 1) return std::nullopt;
  Matrix y(per.output_count(), n);
  for (Index d = 0; d < per.output_count(); ++d) y.row(d) = per.y[static_cast<std::size_t>(d)].transpose();
  return y;
}

Matrix pca_latents(const Matrix& y, Index q, std::mt19937_64& rng) {
  const Matrix centered = y.rowwise() - y.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  Matrix h = Matrix::Zero(y.rows(), q);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (Index j = 0; j < q; ++j) {
    if (j < svd.singularValues().size() && svd.singularValues()(j) > 1e-12) {
      h.col(j) = svd.matrixU().col(j) * svd.singularValues()(j);
      const double sd = std::sqrt((h.col(j).array() - h.col(j).mean()).square().mean());
      if (sd > 0.0) h.col(j) /= sd;
    } else {
      for (Index d = 0; d < y.rows(); ++d) h(d, j) = normal(rng);
    }
  }
  return h;
}

// Outputs observed at different inputs: Gaussian-kernel smooth each output onto
// a shared reference set so they can be compared column by column.
Matrix smoothed_targets(const std::vector<const ReplicaInputs*>& inputs,
                        const std::vector<std::vector<double>>& ys, const Matrix& reference,
                        const Vector& range) {
  const Vector inv_bw = (0.1 * range).cwiseInverse();
  Matrix out(static_cast<Index>(inputs.size()), reference.rows());
  for (std::size_t d = 0; d < inputs.size(); ++d) {
    const Matrix x = inputs[d]->stacked();
    const auto& y = ys[d];
    for (Index k = 0; k < reference.rows(); ++k) {
      double num = 0.0, den = 0.0;
      for (Index i = 0; i < x.rows(); ++i) {
        const double z2 = ((x.row(i) - reference.row(k)).transpose().cwiseProduct(inv_bw)).squaredNorm();
        const double w = std::exp(-0.5 * z2) + 1e-300;
        num += w * y[static_cast<std::size_t>(i)];
        den += w;
      }
      out(static_cast<Index>(d), k) = den > 0.0 ? num / den : 0.0;
    }
  }
  return out;
}

// Up to m distinct rows of `points`, evenly strided in lexicographic order.
Matrix strided_subset(const Matrix& points, Index m) {
  std::vector<Index> idx(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
  auto less = [&](Index a, Index b) {
    for (Index c = 0; c < points.cols(); ++c) {
      if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
    }
    return a < b;
  };
  std::sort(idx.begin(), idx.end(), less);
  idx.erase(std::unique(idx.begin(), idx.end(),
                        [&](Index a, Index b) { return points.row(a) == points.row(b); }),
            idx.end());
  const auto count = static_cast<Index>(idx.size());
  const Index take = std::min(m, count);
  Matrix out(take, points.cols());
  for (Index k = 0; k < take; ++k) {
    const Index pos = take == 1 ? count / 2
                                : static_cast<Index>(std::llround(static_cast<double>(k) *
                                                                  static_cast<double>(count - 1) /
                                                                  static_cast<double>(take - 1)));
    out.row(k) = points.row(idx[static_cast<std::size_t>(pos)]);
  }
  return out;
}

Matrix vstack(const std::vector<Matrix>& parts, Index cols) {
  Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

}  // namespace

const ParamSpan& FlatParams::span(const std::string& name) const {
  for (const auto& s : layout) {
    if (s.name == name) return s;
  }
  throw Error("no parameter span named '" + name + "'");
}

const std::string& FlatParams::span_of(Index i) const {
  for (const auto& s : layout) {
    if (i >= s.offset && i < s.offset + s.size) return s.name;
  }
  throw DimensionError("coordinate " + std::to_string(i) + " outside the parameter vector");
}

FlatParams pack(const ModelState& state) {
  state.validate();
  Packer p;
  visit_layout(state, [&](const std::string& name, const Vector& v) { p.add(name, v); });
  return p.finish();
}

ModelState unpack(const FlatParams& params, const ModelState& shape) {
  ModelState s = shape;
  Index at = 0;
  auto take = [&](Index n) {
    if (at + n > params.size()) throw DimensionError("parameter vector too short for the model shape");
    Vector v = params.values.segment(at, n);
    at += n;
    return v;
  };
  const Index v_dim = shape.input_dim();
  const Index q_dim = shape.latent_dim();
  const Index d_count = shape.output_count();
  if (!shape.flat) {
    s.hier.kg.variance = std::exp(take(1)(0));
    s.hier.kg.lengthscales = exp_of(take(v_dim));
  }
  s.hier.kf.variance = std::exp(take(1)(0));
  s.hier.kf.lengthscales = exp_of(take(v_dim));
  s.latent_kernel.variance = std::exp(take(1)(0));
  s.latent_kernel.lengthscales = exp_of(take(q_dim));
  s.latent.means = reshape(take(d_count * q_dim), d_count, q_dim);
  s.latent.variances = reshape(take(d_count * q_dim), d_count, q_dim).array().exp().matrix();
  for (auto& b : s.inducing.zx.blocks) b = reshape(take(b.size()), b.rows(), b.cols());
  const Index m_h = shape.inducing.mh();
  const Index m_x = shape.inducing.mx();
  s.inducing.zh = reshape(take(m_h * q_dim), m_h, q_dim);
  s.inducing.mean = reshape(take(m_x * m_h), m_x, m_h);
  s.inducing.chol_h = chol_from_flat(take(m_h * (m_h + 1) / 2), m_h);
  s.inducing.chol_x = chol_from_flat(take(m_x * (m_x + 1) / 2), m_x);
  s.noise = exp_of(take(shape.noise.size()));
  if (at != params.size()) throw DimensionError("parameter vector longer than the model shape");
  return s;
}

Vector pack_gradient(const StateGradient& g, const ModelState& state) {
  std::vector<double> out;
  auto put = [&](const Vector& v) { out.insert(out.end(), v.data(), v.data() + v.size()); };
  auto put_m = [&](const Matrix& m) { put(Eigen::Map<const Vector>(m.data(), m.size())); };
  if (!state.flat) {
    put(Vector::Constant(1, g.hier.kg.log_variance));
    put(g.hier.kg.log_lengthscales);
  }
  put(Vector::Constant(1, g.hier.kf.log_variance));
  put(g.hier.kf.log_lengthscales);
  put(Vector::Constant(1, g.latent_kernel.log_variance));
  put(g.latent_kernel.log_lengthscales);
  put_m(g.latent_means);
  put_m(g.latent_log_variances);
  for (const auto& b : g.zx) put_m(b);
  put_m(g.zh);
  put_m(g.mean);
  put(chol_to_flat(g.chol_h, false));
  put(chol_to_flat(g.chol_x, false));
  put(g.log_noise);
  return Eigen::Map<const Vector>(out.data(), static_cast<Index>(out.size()));
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate", "must be > 0");
  if (iterations < 1) throw ConfigError("optimizer.iterations", "must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("optimizer.adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("optimizer.adam_beta2", "must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("optimizer.adam_eps", "must be > 0");
  if (!(fd_step > 0.0)) throw ConfigError("optimizer.fd_step", "must be > 0");
  if (plateau_window < 1) throw ConfigError("optimizer.plateau_window", "must be >= 1");
}

void InitConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("model.latent_dim", "must be >= 1");
  if (inducing_h < 1) throw ConfigError("model.inducing_h", "must be >= 1");
  if (inducing_x_per_replica < 1) throw ConfigError("model.inducing_x_per_replica", "must be >= 1");
  if (!(latent_variance > 0.0)) throw ConfigError("model.latent_variance", "must be > 0");
}

ElboAndGradient grad_elbo(const FlatParams& params, const ModelState& shape,
                          const TrainingData& data, GradientMode mode, double fd_step) {
  ElboAndGradient out;
  const ModelState state = unpack(params, shape);
  if (mode == GradientMode::Analytic) {
    StateGradient g;
    out.elbo = elbo_with_gradient(state, data, g);
    if (std::isfinite(out.elbo.total)) out.grad = pack_gradient(g, state);
  } else {
    out.elbo = elbo(state, data);
    if (std::isfinite(out.elbo.total)) {
      out.grad.resize(params.size());
      FlatParams probe = params;
      for (Index i = 0; i < params.size(); ++i) {
        const double x = params.values(i);
        const double h = fd_step * std::max(1.0, std::abs(x));
        probe.values(i) = x + h;
        const double up = elbo_value(probe, shape, data);
        probe.values(i) = x - h;
        const double down = elbo_value(probe, shape, data);
        probe.values(i) = x;
        out.grad(i) = (up - down) / (2.0 * h);
      }
    }
  }
  if (!std::isfinite(out.elbo.total)) {
    throw EvaluationError(blame(params), "non-finite ELBO");
  }
  for (Index i = 0; i < out.grad.size(); ++i) {
    if (!std::isfinite(out.grad(i))) throw EvaluationError(params.span_of(i), "non-finite gradient");
  }
  return out;
}

void adam_step(Vector& params, const Vector& grad, AdamMoments& moments,
               const OptimizerConfig& config, Index t) {
  if (t < 1) throw Error("adam_step: step count starts at 1");
  if (grad.size() != params.size()) throw DimensionError("adam_step: gradient size mismatch");
  if (moments.m.size() != params.size()) moments.m = Vector::Zero(params.size());
  if (moments.v.size() != params.size()) moments.v = Vector::Zero(params.size());
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  moments.m = b1 * moments.m + (1.0 - b1) * grad;
  moments.v = b2 * moments.v + (1.0 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const auto m_hat = moments.m.array() / c1;
  const auto v_hat = moments.v.array() / c2;
  params.array() += config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
}

ModelState initialize(const TrainingData& data, const InitConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto inputs = inputs_per_output(data);
  const auto d_count = static_cast<Index>(inputs.size());
  if (d_count < 1) throw DimensionError("initialize: no outputs");
  const Index r_count = inputs.front()->replica_count();
  Index v_dim = 0;
  for (const auto* x : inputs) {
    if (x->total_points() > 0) v_dim = x->input_dim();
  }
  if (v_dim < 1) throw DimensionError("initialize: no observations");

  std::vector<double> all_y;
  std::vector<std::vector<double>> per_output_y(static_cast<std::size_t>(d_count));
  if (const auto* s = std::get_if<SharedInputData>(&data)) {
    for (Index d = 0; d < d_count; ++d)
      for (Index i = 0; i < s->y.rows(); ++i) per_output_y[static_cast<std::size_t>(d)].push_back(s->y(i, d));
  } else {
    const auto& per = std::get<PerOutputData>(data);
    for (Index d = 0; d < d_count; ++d) {
      const auto& y = per.y[static_cast<std::size_t>(d)];
      per_output_y[static_cast<std::size_t>(d)].assign(y.data(), y.data() + y.size());
    }
  }
  for (const auto& v : per_output_y) all_y.insert(all_y.end(), v.begin(), v.end());
  const double var_y = sample_variance(all_y);

  std::vector<Matrix> pooled_by_replica(static_cast<std::size_t>(r_count));
  std::vector<Matrix> everything;
  for (Index r = 0; r < r_count; ++r) {
    std::vector<Matrix> parts;
    for (const auto* x : inputs) {
      if (x->blocks[static_cast<std::size_t>(r)].rows() > 0) parts.push_back(x->blocks[static_cast<std::size_t>(r)]);
    }
    pooled_by_replica[static_cast<std::size_t>(r)] = vstack(parts, v_dim);
    everything.push_back(pooled_by_replica[static_cast<std::size_t>(r)]);
  }
  const Matrix all_x = vstack(everything, v_dim);
  Vector range = all_x.colwise().maxCoeff() - all_x.colwise().minCoeff();
  for (Index c = 0; c < v_dim; ++c) {
    if (!(range(c) > 1e-6)) range(c) = 1.0;
  }

  ModelState s;
  s.flat = config.flat;
  s.hier.kf = {config.kf_family, var_y, range};
  s.hier.kg = {config.kg_family, config.flat ? 0.0 : 0.1 * var_y, range};
  s.latent_kernel = {KernelFamily::RBF, 1.0, Vector::Ones(config.latent_dim)};

  if (const auto grid = common_grid_targets(data); grid && d_count > 1) {
    s.latent.means = pca_latents(*grid, config.latent_dim, rng);
  } else if (d_count > 1) {
    const Matrix reference = strided_subset(all_x, kSmoothingReferencePoints);
    s.latent.means = pca_latents(smoothed_targets(inputs, per_output_y, reference, range), config.latent_dim, rng);
  } else {
    s.latent.means.resize(d_count, config.latent_dim);
    for (Index j = 0; j < config.latent_dim; ++j)
      for (Index d = 0; d < d_count; ++d) s.latent.means(d, j) = 0.1 * normal(rng);
  }
  s.latent.variances = Matrix::Constant(d_count, config.latent_dim, config.latent_variance);

  for (Index r = 0; r < r_count; ++r) {
    const Matrix& pool = pooled_by_replica[static_cast<std::size_t>(r)];
    s.inducing.zx.blocks.push_back(
        strided_subset(pool.rows() > 0 ? pool : all_x, config.inducing_x_per_replica));
  }
  // Z^H starts on the latent means (evenly strided), extra points from N(0, I).
  s.inducing.zh.resize(config.inducing_h, config.latent_dim);
  const Matrix on_means = strided_subset(s.latent.means, config.inducing_h);
  for (Index m = 0; m < config.inducing_h; ++m)
    for (Index j = 0; j < config.latent_dim; ++j)
      s.inducing.zh(m, j) = m < on_means.rows() ? on_means(m, j) + 0.01 * normal(rng) : normal(rng);
  s.inducing.mean = Matrix::Zero(s.inducing.mx(), config.inducing_h);
  s.inducing.chol_h =
      0.1 * cholesky_jitter(latent_cov(s.latent_kernel, s.inducing.zh, s.inducing.zh)).lower;
  s.inducing.chol_x =
      0.1 * cholesky_jitter(hier_block_cov(s.hier, s.inducing.zx, s.inducing.zx)).lower;

  if (config.per_output_noise && std::holds_alternative<PerOutputData>(data)) {
    s.noise.resize(d_count);
    for (Index d = 0; d < d_count; ++d) {
      s.noise(d) = 0.1 * sample_variance(per_output_y[static_cast<std::size_t>(d)]);
    }
  } else {
    s.noise = Vector::Constant(1, 0.1 * var_y);
  }
  // Start q(U) at its optimal mean for the initial hyperparameters when the
  // dense system is small enough; a zero mean leaves the noise to explain everything.
  if (s.inducing.mx() * config.inducing_h <= kOptimalInducingMaxSize) {
    try {
      const OptimalInducing opt = optimal_inducing_posterior(s, data);
      if (opt.mean.allFinite()) {
        s.inducing.mean = Eigen::Map<const Matrix>(opt.mean.data(), s.inducing.mx(), config.inducing_h);
      }
    } catch (const IndefiniteMatrixError&) {
    }
  }
  s.validate();
  return s;
}

FitResult fit(const TrainingData& data, const ModelState& init, const OptimizerConfig& config) {
  config.validate();
  init.validate();
  validate_data(data, init);

  FlatParams params = pack(init);
  Vector mask = Vector::Ones(params.size());
  if (!config.trainable.empty()) {
    mask.setZero();
    for (const auto& name : config.trainable) {
      const ParamSpan& sp = params.span(name);
      mask.segment(sp.offset, sp.size).setOnes();
    }
  }

  FitResult result;
  result.trace.reserve(static_cast<std::size_t>(config.iterations + 1));
  double best = -std::numeric_limits<double>::infinity();
  Vector best_values = params.values;
  Index since_best = 0;

  auto record = [&](const ElboAndGradient& eg, Index t) {
    result.trace.push_back(eg.elbo.total);
    if (eg.elbo.jitter_h > 0.0 || eg.elbo.jitter_x > 0.0) ++result.jitter_events;
    if (eg.elbo.total > best) {
      best = eg.elbo.total;
      best_values = params.values;
      result.best_iteration = t;
      since_best = 0;
    } else if (++since_best == config.plateau_window && config.verbose) {
      std::clog << "fit: no improvement for " << config.plateau_window << " iterations at " << t
                << " (best " << best << ")\n";
    }
  };

  ElboAndGradient current;
  try {
    current = grad_elbo(params, init, data, config.gradient_mode, config.fd_step);
  } catch (const Error& e) {
    throw FitError(std::string("fit: initial state cannot be evaluated: ") + e.what());
  }
  record(current, 0);

  AdamMoments moments;
  double step_scale = 1.0;
  Index consecutive_failures = 0;
  constexpr Index kMaxConsecutiveFailures = 8;
  for (Index t = 1; t <= config.iterations;) {
    OptimizerConfig step_config = config;
    step_config.learning_rate *= step_scale;
    FlatParams candidate = params;
    AdamMoments candidate_moments = moments;
    adam_step(candidate.values, mask.cwiseProduct(current.grad), candidate_moments, step_config, t);
    ElboAndGradient next;
    try {
      next = grad_elbo(candidate, init, data, config.gradient_mode, config.fd_step);
    } catch (const Error& e) {
      if (++consecutive_failures > kMaxConsecutiveFailures) {
        throw FitError("fit failed at iteration " + std::to_string(t) + " after " +
                       std::to_string(kMaxConsecutiveFailures) + " step reductions: " + e.what() +
                       "; best ELBO " + std::to_string(best) + " at iteration " +
                       std::to_string(result.best_iteration));
      }
      // Retry the same step from the same point with half the learning rate.
      ++result.recovered_failures;
      step_scale *= 0.5;
      continue;
    }
    consecutive_failures = 0;
    step_scale = std::min(1.0, 2.0 * step_scale);
    params = std::move(candidate);
    moments = std::move(candidate_moments);
    current = std::move(next);
    record(current, t);
    if (config.verbose && t % 500 == 0) std::clog << "fit: iteration " << t << " elbo " << current.elbo.total << "\n";
    ++t;
  }

  FlatParams best_params = params;
  best_params.values = best_values;
  result.state = unpack(best_params, init);
  return result;
}

FitResult fit(const TrainingData& data, const OptimizerConfig& config, const InitConfig& init) {
  return fit(data, initialize(data, init), config);
}

}  // namespace hmogp
