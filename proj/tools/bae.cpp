// bae: experiment runner and scoring tool.
//
//   bae run     --config exp.json [--seed S] [--out DIR] [--workers N]
//   bae score   --model m.json --data x.csv [--label-column label] --out scores.csv
//   bae grid    (--model m.json | --config exp.json [--seed S]) --bounds lo,hi[,lo,hi]
//               [--resolution 100] [--log] --out grid.csv
//   bae lr-find --config exp.json [--seed S] [--lr-min 1e-6] [--lr-max 1] [--steps 100] [--out lr.csv]

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bae/error.hpp"
#include "bae/experiment.hpp"
#include "bae/model_io.hpp"
#include "bae/parallel.hpp"

namespace {

std::vector<bae::AxisBounds> parse_bounds(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw bae::ConfigError("--bounds: '" + cell + "' is not a number");
    }
  }
  if (v.size() != 2 && v.size() != 4) throw bae::ConfigError("--bounds takes lo,hi or lo,hi,lo,hi");
  std::vector<bae::AxisBounds> out;
  for (std::size_t i = 0; i < v.size(); i += 2) out.push_back({v[i], v[i + 1]});
  return out;
}

bae::ExperimentConfig config_with_overrides(const std::string& path, const std::optional<std::uint64_t>& seed,
                                            const std::optional<std::string>& out) {
  bae::ExperimentConfig cfg = bae::load_config(path);
  if (seed) cfg.seeds = {*seed};
  if (out) cfg.output.dir = *out;
  return cfg;
}

// Trains the first run of a config on its first seed.
bae::TrainedModel train_first_run(const bae::ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.seeds.front();
  const bae::RunSpec& run = cfg.runs.front();
  const bae::PreparedData data = bae::prepare_data(cfg, seed);
  if (run.method == "nngp") {
    return bae::TrainedModel::from_infinite(bae::InfiniteAutoencoder(data.split.train.x, cfg.nngp), data.scaler);
  }
  const auto spec = bae::architecture_for(cfg.architecture, run, static_cast<std::size_t>(data.split.train.x.cols()));
  const bae::TrainConfig tc = bae::train_config_for(cfg, run, seed);
  return bae::TrainedModel::from_posterior(bae::train(spec, data.split.train.x, tc), data.scaler);
}

int cmd_run(const std::string& config, const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out,
            const std::optional<std::size_t>& workers) {
  bae::ExperimentConfig cfg = config_with_overrides(config, seed, out);
  if (workers) cfg.workers = *workers;
  const bae::ExperimentResult res = bae::run_experiment(cfg);
  for (const bae::RunRecord& r : res.records) {
    std::cout << r.method << ' ' << bae::to_string(r.arch_type) << " seed=" << r.seed << ' ';
    if (r.ok) {
      std::cout << "auroc=" << std::setprecision(4) << r.auroc << '\n';
    } else {
      std::cout << "FAILED: " << r.error << '\n';
    }
  }
  for (const auto& [type, value] : res.ate) {
    std::cout << "ATE " << bae::to_string(type) << " = " << std::setprecision(4) << value << '\n';
  }
  std::cout << "results in " << cfg.output.dir.string() << '\n';
  if (res.failures == res.records.size()) {
    std::cerr << "all runs failed\n";
    return 2;
  }
  return 0;
}

int cmd_score(const std::string& model_path, const std::string& data_path, const std::optional<std::string>& label,
              const std::string& out_path) {
  const bae::TrainedModel model = bae::load_model(model_path);
  const bae::Dataset data = bae::load_csv(data_path, label);
  if (data.size() == 0) throw bae::ParameterError("'" + data_path + "' holds no rows");
  const bae::Vector scores = model.score_raw(data.x);
  std::ofstream out(out_path);
  if (!out) throw bae::IoError("cannot write '" + out_path + "'");
  out << "score\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < scores.size(); ++i) out << scores(i) << '\n';
  return 0;
}

int cmd_grid(const std::optional<std::string>& model_path, const std::optional<std::string>& config,
             const std::optional<std::uint64_t>& seed, const std::string& bounds, std::size_t resolution, bool log,
             const std::string& out_path) {
  if (model_path.has_value() == config.has_value()) throw bae::ConfigError("grid needs exactly one of --model, --config");
  const bae::TrainedModel model = model_path ? bae::load_model(*model_path)
                                             : train_first_run(config_with_overrides(*config, seed, std::nullopt));
  const auto b = parse_bounds(bounds);
  if (b.size() != model.input_dim()) {
    throw bae::ShapeError("--bounds covers " + std::to_string(b.size()) + " axes, model expects D=" +
                          std::to_string(model.input_dim()));
  }
  const bae::ScoreGrid grid =
      bae::score_grid([&](const bae::Matrix& x) { return model.score(x); }, b, resolution, log);
  std::ofstream out(out_path);
  if (!out) throw bae::IoError("cannot write '" + out_path + "'");
  bae::write_grid_csv(grid, out);
  return 0;
}

int cmd_lr_find(const std::string& config, const std::optional<std::uint64_t>& seed, double lr_min, double lr_max,
                std::size_t steps, const std::optional<std::string>& out_path) {
  const bae::ExperimentConfig cfg = config_with_overrides(config, seed, std::nullopt);
  const bae::RunSpec* run = nullptr;
  for (const bae::RunSpec& r : cfg.runs) {
    if (r.method != "nngp") {
      run = &r;
      break;
    }
  }
  if (!run) throw bae::ConfigError("lr-find needs a finite-width run in the config");
  const bae::PreparedData data = bae::prepare_data(cfg, cfg.seeds.front());
  const auto spec = bae::architecture_for(cfg.architecture, *run, static_cast<std::size_t>(data.split.train.x.cols()));
  const bae::LrRangeResult res = bae::lr_range_test(spec, data.split.train.x, lr_min, lr_max, steps, cfg.seeds.front());
  if (out_path) {
    std::ofstream out(*out_path);
    if (!out) throw bae::IoError("cannot write '" + *out_path + "'");
    out << "lr,smoothed_loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < res.lrs.size(); ++i) out << res.lrs[i] << ',' << res.smoothed_loss[i] << '\n';
  }
  std::cout << "suggested lr: " << std::setprecision(6) << res.suggested_lr << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian autoencoders for anomaly detection"};
  app.require_subcommand(1);

  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  auto* run = app.add_subcommand("run", "run an experiment sweep");
  std::optional<std::size_t> workers;
  run->add_option("--config", config, "experiment config (JSON)")->required();
  run->add_option("--seed", seed, "run only this seed");
  run->add_option("--out", out, "output directory");
  run->add_option("--workers", workers, "concurrent runs (default: config, else BAE_WORKERS)");

  auto* score = app.add_subcommand("score", "score a CSV with a saved model");
  std::string model_path;
  std::string data_path;
  std::optional<std::string> label_column;
  std::string score_out;
  score->add_option("--model", model_path, "model file")->required();
  score->add_option("--data", data_path, "CSV with a header row")->required();
  score->add_option("--label-column", label_column, "column to drop before scoring");
  score->add_option("--out", score_out, "scores file")->required();

  auto* grid = app.add_subcommand("grid", "evaluate scores on a regular lattice");
  std::optional<std::string> grid_model;
  std::string bounds;
  std::size_t resolution = 100;
  bool log = false;
  std::string grid_out;
  grid->add_option("--model", grid_model, "model file");
  grid->add_option("--config", config, "train the first run of this config instead");
  grid->add_option("--seed", seed, "seed for --config");
  grid->add_option("--bounds", bounds, "lo,hi or lo,hi,lo,hi in model input units")->required();
  grid->add_option("--resolution", resolution, "points per axis");
  grid->add_flag("--log", log, "write log(score + 1e-12)");
  grid->add_option("--out", grid_out, "grid CSV")->required();

  auto* lr = app.add_subcommand("lr-find", "learning-rate range test");
  double lr_min = 1e-6;
  double lr_max = 1.0;
  std::size_t steps = 100;
  std::optional<std::string> lr_out;
  lr->add_option("--config", config, "experiment config")->required();
  lr->add_option("--seed", seed, "seed");
  lr->add_option("--lr-min", lr_min, "smallest lr");
  lr->add_option("--lr-max", lr_max, "largest lr");
  lr->add_option("--steps", steps, "number of lrs");
  lr->add_option("--out", lr_out, "CSV of lr against smoothed loss");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!workers && std::getenv("BAE_WORKERS")) workers = bae::default_worker_count();
      return cmd_run(*config, seed, out, workers);
    }
    if (*score) return cmd_score(model_path, data_path, label_column, score_out);
    if (*grid) return cmd_grid(grid_model, config, seed, bounds, resolution, log, grid_out);
    if (*lr) return cmd_lr_find(*config, seed, lr_min, lr_max, steps, lr_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
