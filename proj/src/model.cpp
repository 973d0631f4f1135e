#include "hmogp/model.hpp"

#include <type_traits>

namespace hmogp {

void ModelState::validate() const {
  hier.validate(flat);
  if (flat && hier.kg.variance != 0.0) throw Error("flat ablation requires k_g variance 0");
  latent_kernel.validate();
  latent.validate();
  inducing.validate();
  if (latent_kernel.input_dim() != latent.latent_dim()) {
    throw DimensionError("k_H lengthscales do not match the latent dimension");
  }
  if (inducing.zh.cols() != latent.latent_dim()) {
    throw DimensionError("Z^H does not match the latent dimension");
  }
  if (inducing.zx.input_dim() != hier.input_dim()) {
    throw DimensionError("Z^X does not match the input dimension");
  }
  if (noise.size() != 1 && noise.size() != output_count()) {
    throw DimensionError("noise must have 1 or D entries");
  }
  if (!(noise.array() > 0.0).all() || !noise.allFinite()) {
    throw Error("noise variances must be positive");
  }
}

SharedInputData make_shared_data(const ReplicaInputs& x, const Vector& y_stacked, Index outputs) {
  const Index n = x.total_points();
  if (outputs < 1 || y_stacked.size() != n * outputs) {
    throw DimensionError("shared data: y has length " + std::to_string(y_stacked.size()) +
                         ", expected D * N = " + std::to_string(n * outputs));
  }
  return {x, Eigen::Map<const Matrix>(y_stacked.data(), n, outputs)};
}

PerOutputData to_per_output(const SharedInputData& data) {
  PerOutputData out;
  for (Index d = 0; d < data.y.cols(); ++d) {
    out.x.push_back(data.x);
    out.y.emplace_back(data.y.col(d));
  }
  return out;
}

Index output_count(const TrainingData& data) {
  return std::visit(
      [](const auto& d) -> Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(d)>, SharedInputData>) {
          return d.y.cols();
        } else {
          return d.output_count();
        }
      },
      data);
}

Index replica_count(const TrainingData& data) {
  return std::visit(
      [](const auto& d) -> Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(d)>, SharedInputData>) {
          return d.x.replica_count();
        } else {
          return d.x.empty() ? 0 : d.x.front().replica_count();
        }
      },
      data);
}

void validate_data(const TrainingData& data, const ModelState& state) {
  if (output_count(data) != state.output_count()) {
    throw DimensionError("data has " + std::to_string(output_count(data)) +
                         " outputs, model has " + std::to_string(state.output_count()));
  }
  auto check_inputs = [&](const ReplicaInputs& x) {
    x.validate();
    if (x.replica_count() != state.replica_count()) {
      throw DimensionError("data has " + std::to_string(x.replica_count()) +
                           " replicas, model has " + std::to_string(state.replica_count()));
    }
    if (x.total_points() > 0 && x.input_dim() != state.input_dim()) {
      throw DimensionError("data input dimension does not match the model");
    }
  };
  if (const auto* shared = std::get_if<SharedInputData>(&data)) {
    check_inputs(shared->x);
    if (shared->y.rows() != shared->x.total_points()) {
      throw DimensionError("shared data: target rows do not match the inputs");
    }
    if (!shared->y.allFinite()) throw DimensionError("non-finite targets");
  } else {
    const auto& per = std::get<PerOutputData>(data);
    if (per.x.size() != per.y.size()) throw DimensionError("per-output data: x/y count mismatch");
    for (std::size_t d = 0; d < per.x.size(); ++d) {
      check_inputs(per.x[d]);
      if (per.y[d].size() != per.x[d].total_points()) {
        throw DimensionError("per-output data: output " + std::to_string(d) +
                             " targets do not match its inputs");
      }
      if (!per.y[d].allFinite()) throw DimensionError("non-finite targets");
    }
  }
}

}  // namespace hmogp
