// hmogp: generate | fit | predict | eval | experiment

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "hmogp/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace hmogp;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kFit = 4, kEval = 5 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ablation;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.seeds = {*c.seed};
  }
  if (!c.ablation.empty()) {
    if (c.ablation != "flat") throw ConfigError("--ablation", "only 'flat' is supported");
    cfg.model.flat = true;
  }
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  const fs::path p = c.out.empty() ? fs::path("hmogp_out") : fs::path(c.out);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void print_report(const EvalReport& r) {
  std::cout << "nmse " << r.nmse << "  nlpd " << r.nlpd << "  n_test " << r.n_test << '\n';
}

int cmd_generate(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path out = out_dir(c);
  const HierarchicalDataset data = make_dataset(cfg, cfg.seed);
  const auto [train, test] = make_split(data, cfg, cfg.seed);
  save_csv(data, out / "data.csv");
  save_csv(train, out / "train.csv");
  save_csv(test, out / "test.csv");
  std::cout << "wrote " << data.total_points() << " points (" << train.total_points() << " train, "
            << test.total_points() << " test) to " << out.string() << '\n';
  return kOk;
}

int cmd_fit(const Common& c, const std::string& data_path) {
  RunConfig cfg = resolve(c);
  const fs::path out = out_dir(c);
  HierarchicalDataset train;
  if (data_path.empty()) {
    const HierarchicalDataset data = make_dataset(cfg, cfg.seed);
    auto parts = make_split(data, cfg, cfg.seed);
    train = std::move(parts.first);
    save_csv(train, out / "train.csv");
    save_csv(parts.second, out / "test.csv");
  } else {
    train = load_csv(data_path);
    if (cfg.data.standardize) train = standardize(train);
  }
  InitConfig init = cfg.model;
  init.seed = derive_seed(cfg.seed, 3);
  OptimizerConfig opt = cfg.optimizer;
  opt.seed = derive_seed(cfg.seed, 4);
  const auto start = std::chrono::steady_clock::now();
  const FitResult result = fit(train.to_training(), opt, init);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(out / "model.json", model_to_json(result.state) + "\n");
  write_trace_csv(result.trace, out / "trace.csv");
  nlohmann::ordered_json manifest;
  manifest["software_version"] = kSoftwareVersion;
  manifest["seed"] = cfg.seed;
  manifest["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
  manifest["training_data"] = data_path.empty() ? std::string("generated") : data_path;
  manifest["jitter_events"] = result.jitter_events;
  manifest["recovered_step_failures"] = result.recovered_failures;
  manifest["final_elbo"] = result.trace.back();
  manifest["best_elbo"] = result.trace[static_cast<std::size_t>(result.best_iteration)];
  manifest["best_iteration"] = result.best_iteration;
  manifest["wall_clock_seconds"] = seconds;
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "elbo " << result.trace.front() << " -> " << result.trace.back() << " (best "
            << result.trace[static_cast<std::size_t>(result.best_iteration)] << " at iteration "
            << result.best_iteration << ") in " << seconds << " s\n";
  return kOk;
}

int cmd_predict(const Common& c, const std::string& model_path, const std::string& grid_path, Index samples,
                bool no_noise) {
  const ModelState state = model_from_json(read_file(model_path));
  const HierarchicalDataset grid = load_csv(grid_path);
  PredictionConfig pc;
  pc.mc_samples = samples;
  pc.include_noise = !no_noise;
  const PredictionTable table = predict_dataset(state, grid, pc, derive_seed(c.seed.value_or(0), 5));
  const fs::path out = c.out.empty() ? fs::path("predictions.csv") : fs::path(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_predictions_csv(table, out);
  std::cout << "wrote " << table.mean.size() << " predictions to " << out.string() << '\n';
  return kOk;
}

int cmd_eval(const Common& c, const std::string& pred_path, const std::string& truth_path) {
  const PredictionTable table = read_predictions_csv(pred_path);
  const HierarchicalDataset truth = load_csv(truth_path);
  const EvalReport report = evaluate_table(table, truth);
  if (!c.out.empty()) {
    const fs::path out = out_dir(c);
    write_metrics(report, out / "metrics.json", out / "metrics.csv");
  }
  print_report(report);
  return kOk;
}

int cmd_experiment(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path out = out_dir(c);
  const ExperimentSummary s = run_experiment(cfg, out);
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    std::cout << "seed " << s.seeds[i] << ": ";
    print_report(s.reports[i]);
  }
  std::cout << "nmse " << s.nmse_mean << " +- " << s.nmse_sd << "  nlpd " << s.nlpd_mean << " +- " << s.nlpd_sd
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical multi-output GP with latent variables"};
  app.set_version_flag("--version", std::string(kSoftwareVersion));
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", common.config, "JSON configuration file");
    sub->add_option("--seed", common.seed, "Run seed (overrides the configuration)");
    sub->add_option("--out", common.out, "Output directory");
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset and its train/test split");
  add_common(gen, true);

  std::string data_path;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model and write model.json");
  add_common(fit_cmd, true);
  fit_cmd->add_option("--data", data_path, "Training CSV (default: generate and split per the configuration)");
  fit_cmd->add_option("--ablation", common.ablation, "Ablation to apply")->check(CLI::IsMember({"flat"}));

  std::string model_path, grid_path;
  Index samples = kDefaultMixtureSamples;
  bool no_noise = false;
  auto* pred = app.add_subcommand("predict", "Predict at the points of a CSV");
  add_common(pred, false);
  pred->add_option("--model", model_path, "model.json from fit")->required();
  pred->add_option("--grid", grid_path, "CSV with the points to predict (y column ignored)")->required();
  pred->add_option("--samples", samples, "Monte Carlo samples over q(h)")->check(CLI::PositiveNumber);
  pred->add_flag("--no-noise", no_noise, "Predict the latent function instead of observations");

  std::string pred_path, truth_path;
  auto* ev = app.add_subcommand("eval", "Score predictions against held-out data");
  add_common(ev, false);
  ev->add_option("--predictions", pred_path, "predictions.csv")->required();
  ev->add_option("--truth", truth_path, "Held-out CSV")->required();

  auto* exp = app.add_subcommand("experiment", "Run generate/fit/predict/eval for every configured seed");
  add_common(exp, true);
  exp->add_option("--ablation", common.ablation, "Ablation to apply")->check(CLI::IsMember({"flat"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(common);
    if (*fit_cmd) return cmd_fit(common, data_path);
    if (*pred) return cmd_predict(common, model_path, grid_path, samples, no_noise);
    if (*ev) return cmd_eval(common, pred_path, truth_path);
    if (*exp) return cmd_experiment(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const SplitError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ReplicaTagError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kFit;
  } catch (const IndefiniteMatrixError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kFit;
  } catch (const EvaluationError& e) {
    std::cerr << "evaluation error: " << e.what() << '\n';
    return kEval;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
