#pragma once

// Hierarchical datasets: synthetic generation, CSV storage and train/test splits.
//
// CSV schema, one row per observation:
//   output,replica,x_0[,x_1,...],y
// with integer output/replica indices from 0. Dataset metadata lives in a JSON
// sidecar next to the CSV (<path>.meta.json).

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hmogp/model.hpp"

namespace hmogp {

struct ReplicaBlock {
  Matrix x;  ///< N_{d,r} x v
  Vector y;  ///< N_{d,r}
};

struct DatasetMetadata {
  std::vector<std::string> output_names;
  /// Per-output standardization y_std = (y - offset) / scale; empty when raw.
  std::vector<double> offset;
  std::vector<double> scale;
  /// Free-form description of how the data was produced (generator settings, seed).
  std::string provenance;
  /// Latent coordinates used to generate synthetic data (D x Q_H), if known.
  Matrix true_latent;
};

struct HierarchicalDataset {
  std::vector<std::vector<ReplicaBlock>> blocks;  ///< [output][replica]
  DatasetMetadata meta;

  Index output_count() const { return static_cast<Index>(blocks.size()); }
  Index replica_count() const;
  Index input_dim() const;
  Index total_points() const;
  Index points(Index output) const;
  bool standardized() const { return !meta.scale.empty(); }
  void validate() const;

  ReplicaInputs inputs(Index output) const;
  Vector targets(Index output) const;
  PerOutputData to_training() const;
};

struct SyntheticSpec {
  Index outputs = 50;
  Index replicas = 3;
  Index points_per_replica = 10;
  Index input_dim = 1;
  Index latent_dim = 2;
  StationaryKernelSpec kg{KernelFamily::Matern32, 0.1, Vector::Ones(1)};
  StationaryKernelSpec kf{KernelFamily::Matern32, 1.0, Vector::Ones(1)};
  StationaryKernelSpec kh{KernelFamily::RBF, 1.0, Vector::Ones(2)};
  double noise = 0.02;
  /// Same inputs for every output (otherwise one uniform draw per output).
  bool shared_inputs = false;
  /// Use these latent coordinates (D x Q_H) instead of drawing them.
  Matrix fixed_latent;

  void validate() const;
};

/// h_d ~ N(0, I), inputs uniform on [0, 1] (one sorted draw per output, shared
/// by its replicas), f ~ GP(0, k_H * k_hier), y = f + noise.
HierarchicalDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

void save_csv(const HierarchicalDataset& data, const std::filesystem::path& path);
/// Reads the CSV and its sidecar if present. Throws SchemaError with a line number.
HierarchicalDataset load_csv(const std::filesystem::path& path);

/// Per-output zero mean, unit variance targets; constants kept in the metadata.
HierarchicalDataset standardize(const HierarchicalDataset& data);

enum class SplitMode { RandomFraction, MissingReplica };

struct SplitPlan {
  SplitMode mode = SplitMode::RandomFraction;
  double fraction = 0.5;
  std::vector<std::pair<Index, Index>> missing;  ///< (output, replica)
  std::uint64_t seed = 0;
};

/// One uniformly chosen held-out replica per output.
SplitPlan random_missing_plan(const HierarchicalDataset& data, std::uint64_t seed);

/// Disjoint, exhaustive partition of every (output, replica) block.
std::pair<HierarchicalDataset, HierarchicalDataset> split(const HierarchicalDataset& data,
                                                          const SplitPlan& plan);

}  // namespace hmogp
