#include "hmogp/kernels.hpp"

#include <cmath>

namespace hmogp {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

void check_dims(const StationaryKernelSpec& spec, const Matrix& x1, const Matrix& x2) {
  const Index dim = spec.input_dim();
  if ((x1.rows() > 0 && x1.cols() != dim) || (x2.rows() > 0 && x2.cols() != dim)) {
    throw DimensionError("kernel expects " + std::to_string(dim) + "-dimensional points, got " +
                         std::to_string(x1.cols()) + " and " + std::to_string(x2.cols()));
  }
}

void check_replicas(const ReplicaInputs& a, const ReplicaInputs& b) {
  if (a.replica_count() != b.replica_count()) {
    throw DimensionError("replica count mismatch: " + std::to_string(a.replica_count()) + " vs " +
                         std::to_string(b.replica_count()));
  }
}

// d k / d(scaled_sq_dist) * (scaled_sq_dist derivative factor) without the 1/r
// singularity: for Matern32, dk/dr * (1/r) = -3 v exp(-sqrt3 r).
double radial_derivative_over_r(const StationaryKernelSpec& spec, double r2) {
  switch (spec.family) {
    case KernelFamily::RBF:
      return -spec.variance * std::exp(-0.5 * r2);
    case KernelFamily::Matern32:
      return -3.0 * spec.variance * std::exp(-kSqrt3 * std::sqrt(r2));
  }
  return 0.0;
}

}  // namespace

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::RBF:
      return "rbf";
    case KernelFamily::Matern32:
      return "matern32";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(std::string_view name) {
  if (name == "rbf" || name == "RBF") return KernelFamily::RBF;
  if (name == "matern32" || name == "Matern32") return KernelFamily::Matern32;
  throw UnsupportedKernelError("unknown kernel family '" + std::string(name) + "'");
}

void StationaryKernelSpec::validate(bool allow_zero_variance) const {
  const bool ok_variance = allow_zero_variance ? variance >= 0.0 : variance > 0.0;
  if (!ok_variance || !std::isfinite(variance)) {
    throw Error("kernel variance must be positive, got " + std::to_string(variance));
  }
  if (lengthscales.size() == 0) throw DimensionError("kernel has no lengthscales");
  for (Index q = 0; q < lengthscales.size(); ++q) {
    if (!(lengthscales[q] > 0.0) || !std::isfinite(lengthscales[q])) {
      throw Error("kernel lengthscales must be positive");
    }
  }
}

void HierarchicalKernelSpec::validate(bool flat) const {
  kg.validate(flat);
  kf.validate();
  if (kg.input_dim() != kf.input_dim()) {
    throw DimensionError("k_g and k_f disagree on the input dimension");
  }
}

StationaryKernelGrad& StationaryKernelGrad::operator+=(const StationaryKernelGrad& other) {
  log_variance += other.log_variance;
  log_lengthscales += other.log_lengthscales;
  return *this;
}

Index ReplicaInputs::input_dim() const {
  for (const auto& b : blocks) {
    if (b.rows() > 0) return b.cols();
  }
  return blocks.empty() ? 0 : blocks.front().cols();
}

Index ReplicaInputs::total_points() const {
  Index n = 0;
  for (const auto& b : blocks) n += b.rows();
  return n;
}

std::vector<Index> ReplicaInputs::offsets() const {
  std::vector<Index> out;
  out.reserve(blocks.size());
  Index at = 0;
  for (const auto& b : blocks) {
    out.push_back(at);
    at += b.rows();
  }
  return out;
}

Matrix ReplicaInputs::stacked() const {
  Matrix out(total_points(), input_dim());
  Index at = 0;
  for (const auto& b : blocks) {
    if (b.rows() == 0) continue;
    out.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

void ReplicaInputs::validate() const {
  if (blocks.empty()) throw DimensionError("ReplicaInputs needs at least one replica");
  const Index dim = input_dim();
  for (const auto& b : blocks) {
    if (b.rows() > 0 && b.cols() != dim) {
      throw DimensionError("replica blocks disagree on the input dimension");
    }
    if (!b.allFinite()) throw DimensionError("replica block has non-finite entries");
  }
}

double stationary_value(const StationaryKernelSpec& spec, double r2) {
  switch (spec.family) {
    case KernelFamily::RBF:
      return spec.variance * std::exp(-0.5 * r2);
    case KernelFamily::Matern32: {
      const double r = std::sqrt(r2);
      return spec.variance * (1.0 + kSqrt3 * r) * std::exp(-kSqrt3 * r);
    }
  }
  return 0.0;
}

Matrix eval_stationary(const StationaryKernelSpec& spec, const Matrix& x1, const Matrix& x2) {
  check_dims(spec, x1, x2);
  const Vector inv_ls = spec.lengthscales.cwiseInverse();
  Matrix out(x1.rows(), x2.rows());
  for (Index j = 0; j < x2.rows(); ++j) {
    for (Index i = 0; i < x1.rows(); ++i) {
      const double r2 = (x1.row(i) - x2.row(j)).cwiseProduct(inv_ls.transpose()).squaredNorm();
      out(i, j) = stationary_value(spec, r2);
    }
  }
  return out;
}

Matrix hier_block_cov(const HierarchicalKernelSpec& spec, const ReplicaInputs& a,
                      const ReplicaInputs& b) {
  check_replicas(a, b);
  const auto row_at = a.offsets();
  const auto col_at = b.offsets();
  Matrix out = Matrix::Zero(a.total_points(), b.total_points());
  const bool use_kg = spec.kg.variance > 0.0;
  for (Index r = 0; r < a.replica_count(); ++r) {
    const Matrix& ar = a.blocks[r];
    if (ar.rows() == 0) continue;
    for (Index s = 0; s < b.replica_count(); ++s) {
      const Matrix& bs = b.blocks[s];
      if (bs.rows() == 0) continue;
      auto block = out.block(row_at[r], col_at[s], ar.rows(), bs.rows());
      if (use_kg) block = eval_stationary(spec.kg, ar, bs);
      if (r == s) block += eval_stationary(spec.kf, ar, bs);
    }
  }
  return out;
}

Matrix hier_cross_cov(const HierarchicalKernelSpec& spec, const Matrix& points,
                      const std::vector<Index>& replica_of_row, const ReplicaInputs& b) {
  if (static_cast<Index>(replica_of_row.size()) != points.rows()) {
    throw DimensionError("hier_cross_cov: one replica tag per row required");
  }
  const auto col_at = b.offsets();
  Matrix out = Matrix::Zero(points.rows(), b.total_points());
  const bool use_kg = spec.kg.variance > 0.0;
  for (Index s = 0; s < b.replica_count(); ++s) {
    const Matrix& bs = b.blocks[s];
    if (bs.rows() == 0) continue;
    if (use_kg) out.middleCols(col_at[s], bs.rows()) = eval_stationary(spec.kg, points, bs);
  }
  for (Index i = 0; i < points.rows(); ++i) {
    const Index r = replica_of_row[static_cast<std::size_t>(i)];
    if (r < 0 || r >= b.replica_count()) {
      throw ReplicaTagError("replica tag " + std::to_string(r) + " outside [0, " +
                            std::to_string(b.replica_count()) + ")");
    }
    const Matrix& br = b.blocks[r];
    if (br.rows() == 0) continue;
    out.row(i).segment(col_at[r], br.rows()) += eval_stationary(spec.kf, points.row(i), br);
  }
  return out;
}

Matrix latent_cov(const StationaryKernelSpec& spec, const Matrix& h1, const Matrix& h2) {
  return eval_stationary(spec, h1, h2);
}

Matrix full_cov(const Matrix& k_h, const Matrix& k_x) {
  if (k_h.rows() != k_h.cols() || k_x.rows() != k_x.cols()) {
    throw DimensionError("full_cov: factors must be square");
  }
  return kron(k_h, k_x);
}

void backprop_stationary(const StationaryKernelSpec& spec, const Matrix& x1, const Matrix& x2,
                         const Matrix& upstream, StationaryKernelGrad& grad, Matrix* grad_x1,
                         Matrix* grad_x2) {
  check_dims(spec, x1, x2);
  const Index dim = spec.input_dim();
  if (grad.log_lengthscales.size() != dim) grad.log_lengthscales = Vector::Zero(dim);
  const Vector inv_ls2 = spec.lengthscales.array().square().inverse();
  Vector delta(dim);
  for (Index j = 0; j < x2.rows(); ++j) {
    for (Index i = 0; i < x1.rows(); ++i) {
      const double g = upstream(i, j);
      if (g == 0.0) continue;
      delta = (x1.row(i) - x2.row(j)).transpose();
      const double r2 = delta.cwiseProduct(delta).dot(inv_ls2);
      const double k = stationary_value(spec, r2);
      // dk/dx1_q = c * delta_q / l_q^2 with c = dk/dr / r.
      const double c = radial_derivative_over_r(spec, r2);
      grad.log_variance += g * k;
      grad.log_lengthscales.array() -= g * c * delta.array().square() * inv_ls2.array();
      if (grad_x1) grad_x1->row(i) += g * c * (delta.array() * inv_ls2.array()).matrix().transpose();
      if (grad_x2) grad_x2->row(j) -= g * c * (delta.array() * inv_ls2.array()).matrix().transpose();
    }
  }
}

void backprop_hier_block(const HierarchicalKernelSpec& spec, const ReplicaInputs& a,
                         const ReplicaInputs& b, const Matrix& upstream,
                         HierarchicalKernelGrad& grad, std::vector<Matrix>* grad_a,
                         std::vector<Matrix>* grad_b) {
  check_replicas(a, b);
  const auto row_at = a.offsets();
  const auto col_at = b.offsets();
  const bool use_kg = spec.kg.variance > 0.0;
  for (Index r = 0; r < a.replica_count(); ++r) {
    const Matrix& ar = a.blocks[r];
    if (ar.rows() == 0) continue;
    for (Index s = 0; s < b.replica_count(); ++s) {
      const Matrix& bs = b.blocks[s];
      if (bs.rows() == 0) continue;
      const Matrix g = upstream.block(row_at[r], col_at[s], ar.rows(), bs.rows());
      Matrix* ga = grad_a ? &(*grad_a)[r] : nullptr;
      Matrix* gb = grad_b ? &(*grad_b)[s] : nullptr;
      if (use_kg) backprop_stationary(spec.kg, ar, bs, g, grad.kg, ga, gb);
      if (r == s) backprop_stationary(spec.kf, ar, bs, g, grad.kf, ga, gb);
    }
  }
}

}  // namespace hmogp
