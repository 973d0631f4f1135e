#pragma once

// Stationary covariance functions, the hierarchical replica kernel and the
// Gram/cross-covariance assemblies built from them.
//
// Ordering: whenever outputs and inputs are combined, the output index varies
// slowest, i.e. K_ff = K^H kron K^X and f = [f_1; ...; f_D].

#include <string>
#include <string_view>
#include <vector>

#include "hmogp/kron_linalg.hpp"

namespace hmogp {

enum class KernelFamily { RBF, Matern32 };

std::string_view to_string(KernelFamily family);
KernelFamily kernel_family_from_string(std::string_view name);

/// ARD stationary kernel; hyperparameters are kept in natural (positive) units.
struct StationaryKernelSpec {
  KernelFamily family = KernelFamily::RBF;
  double variance = 1.0;
  Vector lengthscales = Vector::Ones(1);

  Index input_dim() const { return lengthscales.size(); }
  /// Throws DimensionError/Error on nonpositive values. `allow_zero_variance`
  /// is used for the flat ablation, where k_g is switched off.
  void validate(bool allow_zero_variance = false) const;
};

struct HierarchicalKernelSpec {
  StationaryKernelSpec kg;  ///< shared across replicas
  StationaryKernelSpec kf;  ///< replica-specific

  Index input_dim() const { return kf.input_dim(); }
  void validate(bool flat = false) const;
};

/// R blocks of points (N_r x v). A block may be empty (missing replica).
struct ReplicaInputs {
  std::vector<Matrix> blocks;

  Index replica_count() const { return static_cast<Index>(blocks.size()); }
  Index input_dim() const;
  Index total_points() const;
  /// Row offset of each block in the stacked representation.
  std::vector<Index> offsets() const;
  Matrix stacked() const;
  void validate() const;
};

Matrix eval_stationary(const StationaryKernelSpec& spec, const Matrix& x1, const Matrix& x2);

/// k(x, x') as a function of the scaled distance; shared by both families.
double stationary_value(const StationaryKernelSpec& spec, double scaled_sq_dist);

/// R x R grid of blocks: (k_g + k_f)(A_r, B_r) on the diagonal, k_g(A_r, B_r') elsewhere.
Matrix hier_block_cov(const HierarchicalKernelSpec& spec, const ReplicaInputs& a,
                      const ReplicaInputs& b);

/// Same as hier_block_cov but with the rows of `points` tagged by replica.
Matrix hier_cross_cov(const HierarchicalKernelSpec& spec, const Matrix& points,
                      const std::vector<Index>& replica_of_row, const ReplicaInputs& b);

Matrix latent_cov(const StationaryKernelSpec& spec, const Matrix& h1, const Matrix& h2);

/// K^H kron K^X with outputs-major ordering.
Matrix full_cov(const Matrix& k_h, const Matrix& k_x);

// ---------------------------------------------------------------------------
// Reverse-mode helpers. Given G = dL/dK for K = k(x1, x2), accumulate dL/d(log
// variance), dL/d(log lengthscales) and optionally dL/dx1, dL/dx2.

struct StationaryKernelGrad {
  double log_variance = 0.0;
  Vector log_lengthscales;

  explicit StationaryKernelGrad(Index dim = 0) : log_lengthscales(Vector::Zero(dim)) {}
  StationaryKernelGrad& operator+=(const StationaryKernelGrad& other);
};

void backprop_stationary(const StationaryKernelSpec& spec, const Matrix& x1, const Matrix& x2,
                         const Matrix& upstream, StationaryKernelGrad& grad, Matrix* grad_x1,
                         Matrix* grad_x2);

struct HierarchicalKernelGrad {
  StationaryKernelGrad kg;
  StationaryKernelGrad kf;

  explicit HierarchicalKernelGrad(Index dim = 0) : kg(dim), kf(dim) {}
};

/// Backprop through hier_block_cov(a, b). grad_a / grad_b (if given) must have
/// one block per replica, shaped like the inputs; contributions are added.
void backprop_hier_block(const HierarchicalKernelSpec& spec, const ReplicaInputs& a,
                         const ReplicaInputs& b, const Matrix& upstream,
                         HierarchicalKernelGrad& grad, std::vector<Matrix>* grad_a,
                         std::vector<Matrix>* grad_b);

}  // namespace hmogp
