#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bae/autoencoder.hpp"
#include "bae/bayes.hpp"
#include "bae/data.hpp"
#include "bae/eval.hpp"
#include "bae/nngp.hpp"

namespace bae {

inline constexpr int kConfigSchemaVersion = 1;

enum class DataSource { Toy, Csv, Tukey };

struct DatasetConfig {
  DataSource source = DataSource::Toy;
  std::string name;
  // toy
  ToyKind inliers = ToyKind::TwoMoons;
  ToyKind anomalies = ToyKind::Ring;
  std::size_t n_inliers = 300;
  std::size_t n_anomalies = 100;
  double noise = 0.1;
  double anomaly_noise = 0.1;
  // csv / tukey
  std::filesystem::path path;
  std::string label_column = "label";
  std::string deviation_column = "deviation";
  double tukey_k = 1.5;
};

/// Applied per row, to the feature axis: each CSV row is one sample, e.g. a
/// sensor trace whose columns are time steps.
struct PreprocessConfig {
  std::size_t downsample = 1;
  std::optional<std::size_t> segment_start;
  std::optional<std::size_t> segment_end;
  bool scale = true;
};

struct ArchitectureConfig {
  std::vector<std::size_t> hidden_widths{50, 50};
  ActivationKind activation = ActivationKind::LeakyReLU;
  bool layer_norm = true;
  SkipMode skip_mode = SkipMode::Concat;
  double undercomplete_factor = 0.5;
  double overcomplete_factor = 10.0;
};

/// One entry of the sweep. `method` is an inference method name or "nngp".
struct RunSpec {
  std::string method;
  ArchitectureType arch_type = ArchitectureType::A;
  double latent_factor = 0.5;
  bool skip = false;
};

struct GridConfig {
  std::vector<AxisBounds> bounds;
  std::size_t resolution = 50;
  bool log = false;
};

struct OutputConfig {
  std::filesystem::path dir = "bae-out";
  bool save_models = false;
  bool save_kernels = false;
  std::optional<GridConfig> grid;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  DatasetConfig dataset;
  PreprocessConfig preprocess;
  ArchitectureConfig architecture;
  std::vector<RunSpec> runs;
  TrainConfig train;
  NNGPConfig nngp;
  std::vector<std::uint64_t> seeds{0};
  OutputConfig output;
  std::size_t workers = 1;

  /// Stable hash of the canonical config (output section excluded).
  std::string fingerprint() const;
  void validate() const;
};

/// JSON config. Unknown keys are rejected so typos surface as ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON form; parse_config(dump_config(c)) == c.
std::string dump_config(const ExperimentConfig& config);

/// Dataset for one seed: split, preprocessed and scaled (scaler fit on train).
struct PreparedData {
  SplitDataset split;
  std::optional<MinMaxScaler> scaler;
};

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

ArchitectureSpec architecture_for(const ArchitectureConfig& arch, const RunSpec& run, std::size_t input_dim);

/// Training settings for one finite run. A shared posterior_samples override
/// does not apply to the deterministic autoencoder, which always has one.
TrainConfig train_config_for(const ExperimentConfig& config, const RunSpec& run, std::uint64_t seed);

struct RunRecord {
  std::string fingerprint;
  std::string dataset;
  std::string method;
  ArchitectureType arch_type = ArchitectureType::A;
  double latent_factor = 0.0;
  bool skip = false;
  std::uint64_t seed = 0;
  double auroc = 0.0;
  double train_nll = 0.0;
  double wall_time_ms = 0.0;
  bool ok = false;
  std::string error;
};

std::string to_json_line(const RunRecord& record);

struct ExperimentResult {
  std::vector<RunRecord> records;  // config order: runs outer, seeds inner
  ResultTable table;
  std::map<ArchitectureType, double> ate;  // empty if no complete A baseline
  std::size_t failures = 0;
};

/// Trains and scores every (run, seed), up to config.workers at a time.
/// A failing run is recorded with its error and does not stop the sweep.
/// Writes results.jsonl (appended) and summary.csv into config.output.dir,
/// plus model/grid/kernel files when enabled.
ExperimentResult run_experiment(const ExperimentConfig& config);

struct LrRangeResult {
  std::vector<double> lrs;
  std::vector<double> smoothed_loss;
  std::optional<std::size_t> divergence_step;
  double suggested_lr = 0.0;
};

/// Exponential learning-rate sweep on a deterministic autoencoder, one Adam
/// step per lr. Divergence is the first step whose smoothed loss exceeds 4x
/// the running minimum; the suggestion is one decade below it (or below the
/// minimum-loss lr when nothing diverges), clamped to [lr_min, lr_max].
LrRangeResult lr_range_test(const ArchitectureSpec& spec, const Matrix& data, double lr_min, double lr_max,
                            std::size_t steps, std::uint64_t seed = 0);

}  // namespace bae
