#pragma once

// Declarative runs: configuration, model files and the generate / fit /
// predict / eval / experiment steps used by the command-line tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hmogp/data_io.hpp"
#include "hmogp/metrics.hpp"
#include "hmogp/prediction.hpp"
#include "hmogp/training.hpp"

namespace hmogp {

inline constexpr const char* kSoftwareVersion = "0.1.0";

struct DataConfig {
  enum class Source { Synthetic, Csv } source = Source::Synthetic;
  std::filesystem::path csv_path;
  bool standardize = false;
  SyntheticSpec synthetic;
};

struct SplitConfig {
  SplitMode mode = SplitMode::RandomFraction;
  double fraction = 0.5;
  /// Explicit held-out blocks; empty with missing_replica means one random replica per output.
  std::vector<std::pair<Index, Index>> missing;
};

struct PredictionConfig {
  Index mc_samples = kDefaultMixtureSamples;
  bool include_noise = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};  ///< experiment repeats
  DataConfig data;
  SplitConfig split;
  InitConfig model;
  OptimizerConfig optimizer;
  PredictionConfig prediction;

  void validate() const;
};

/// Parses the JSON configuration; unknown keys and bad values raise ConfigError
/// with the dotted field path. Missing keys keep their defaults.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
/// Fully resolved configuration as JSON text.
std::string config_to_json(const RunConfig& config);

std::string model_to_json(const ModelState& state);
ModelState model_from_json(const std::string& text);

/// Independent stream seed derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

HierarchicalDataset make_dataset(const RunConfig& config, std::uint64_t seed);
std::pair<HierarchicalDataset, HierarchicalDataset> make_split(const HierarchicalDataset& data,
                                                               const RunConfig& config,
                                                               std::uint64_t seed);

/// Test points of every output with their predictive moments, in dataset order.
struct PredictionTable {
  std::vector<Index> output;
  std::vector<Index> replica;
  Matrix x;
  Vector mean;
  Vector variance;
};

PredictionTable predict_dataset(const ModelState& state, const HierarchicalDataset& points,
                                const PredictionConfig& config, std::uint64_t seed);
EvalReport evaluate_table(const PredictionTable& table, const HierarchicalDataset& truth);

void write_predictions_csv(const PredictionTable& table, const std::filesystem::path& path);
PredictionTable read_predictions_csv(const std::filesystem::path& path);
void write_metrics(const EvalReport& report, const std::filesystem::path& json_path,
                   const std::filesystem::path& csv_path);
void write_trace_csv(const std::vector<double>& trace, const std::filesystem::path& path);

struct RunResult {
  FitResult fit;
  EvalReport report;
  double seconds = 0.0;
};

/// generate -> split -> fit -> predict -> eval for one seed; writes every
/// artifact into `out` when it is non-empty.
RunResult run_once(const RunConfig& config, std::uint64_t seed, const std::filesystem::path& out);

struct ExperimentSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<EvalReport> reports;
  double nmse_mean = 0.0, nmse_sd = 0.0;
  double nlpd_mean = 0.0, nlpd_sd = 0.0;
};

/// run_once over config.seeds, then summary.json / summary.csv with mean and
/// sample standard deviation across repeats.
ExperimentSummary run_experiment(const RunConfig& config, const std::filesystem::path& out);

}  // namespace hmogp
