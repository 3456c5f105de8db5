#include "bae/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bae/error.hpp"
#include "bae/model_io.hpp"
#include "bae/parallel.hpp"

namespace bae {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInlierStream = 11;
constexpr std::uint64_t kAnomalyStream = 12;
constexpr const char* kNngpMethod = "nngp";

std::string_view source_name(DataSource s) {
  switch (s) {
    case DataSource::Toy: return "toy";
    case DataSource::Csv: return "csv";
    case DataSource::Tukey: return "tukey";
  }
  return "toy";
}

std::string_view nngp_activation_name(NngpActivationKind k) {
  switch (k) {
    case NngpActivationKind::Identity: return "identity";
    case NngpActivationKind::ReLU: return "relu";
    case NngpActivationKind::LeakyReLU: return "leaky_relu";
    case NngpActivationKind::Erf: return "erf";
    case NngpActivationKind::GELU: return "gelu";
    case NngpActivationKind::SELU: return "selu";
  }
  return "relu";
}

// Rejects keys outside `allowed` so that misspelled options are not ignored.
void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.contains(key)) throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

bool is_method(const std::string& m) {
  if (m == kNngpMethod) return true;
  try {
    parse_inference_method(m);
    return true;
  } catch (const Error&) {
    return false;
  }
}

RunSpec expand_run(const RunSpec& base, ArchitectureType type, const ArchitectureConfig& arch) {
  RunSpec r = base;
  r.arch_type = type;
  const bool over = type == ArchitectureType::C || type == ArchitectureType::D;
  r.latent_factor = over ? arch.overcomplete_factor : arch.undercomplete_factor;
  r.skip = type == ArchitectureType::B || type == ArchitectureType::D;
  return r;
}

std::vector<RunSpec> parse_runs(const json& j, const ArchitectureConfig& arch) {
  if (!j.is_array()) throw ConfigError("'runs' must be a list");
  std::vector<RunSpec> runs;
  for (const json& e : j) {
    check_keys(e, "runs", {"method", "methods", "arch_type", "arch_types", "latent_factor", "skip"});
    std::vector<std::string> methods;
    if (e.contains("method")) methods.push_back(e.at("method").get<std::string>());
    if (e.contains("methods")) {
      for (const auto& m : e.at("methods")) methods.push_back(m.get<std::string>());
    }
    if (methods.empty()) throw ConfigError("run entry needs 'method' or 'methods'");
    for (const std::string& m : methods) {
      if (!is_method(m)) throw ConfigError("unknown method '" + m + "'");
    }
    std::vector<std::string> types;
    if (e.contains("arch_type")) types.push_back(e.at("arch_type").get<std::string>());
    if (e.contains("arch_types")) {
      for (const auto& t : e.at("arch_types")) types.push_back(t.get<std::string>());
    }
    for (const std::string& m : methods) {
      RunSpec base;
      base.method = m;
      if (m == kNngpMethod) {
        // Infinitely wide and without skips: always type C.
        base.arch_type = ArchitectureType::C;
        base.latent_factor = 0.0;
        base.skip = false;
        runs.push_back(base);
        continue;
      }
      if (types.empty()) {
        if (!e.contains("latent_factor")) throw ConfigError("run entry needs 'arch_type(s)' or 'latent_factor'");
        base.latent_factor = e.at("latent_factor").get<double>();
        base.skip = e.value("skip", false);
        runs.push_back(base);
        continue;
      }
      for (const std::string& t : types) {
        ArchitectureType type;
        try {
          type = parse_architecture_type(t);
        } catch (const Error&) {
          throw ConfigError("unknown arch_type '" + t + "'");
        }
        RunSpec r = expand_run(base, type, arch);
        if (e.contains("latent_factor")) r.latent_factor = e.at("latent_factor").get<double>();
        if (e.contains("skip")) r.skip = e.at("skip").get<bool>();
        runs.push_back(r);
      }
    }
  }
  return runs;
}

json to_json(const ExperimentConfig& c, bool include_output) {
  const DatasetConfig& d = c.dataset;
  json dataset = {{"source", source_name(d.source)}, {"name", d.name}};
  if (d.source == DataSource::Toy) {
    dataset["inliers"] = to_string(d.inliers);
    dataset["anomalies"] = to_string(d.anomalies);
    dataset["n_inliers"] = d.n_inliers;
    dataset["n_anomalies"] = d.n_anomalies;
    dataset["noise"] = d.noise;
    dataset["anomaly_noise"] = d.anomaly_noise;
  } else {
    dataset["path"] = d.path.string();
    if (d.source == DataSource::Csv) {
      dataset["label_column"] = d.label_column;
    } else {
      dataset["deviation_column"] = d.deviation_column;
      dataset["tukey_k"] = d.tukey_k;
    }
  }
  json pre = {{"downsample", c.preprocess.downsample}, {"scale", c.preprocess.scale}};
  if (c.preprocess.segment_start) pre["segment_start"] = *c.preprocess.segment_start;
  if (c.preprocess.segment_end) pre["segment_end"] = *c.preprocess.segment_end;
  const ArchitectureConfig& a = c.architecture;
  json arch = {{"hidden_widths", a.hidden_widths},
               {"activation", to_string(a.activation)},
               {"layer_norm", a.layer_norm},
               {"skip_mode", a.skip_mode == SkipMode::Concat ? "concat" : "add"},
               {"undercomplete_factor", a.undercomplete_factor},
               {"overcomplete_factor", a.overcomplete_factor}};
  json runs = json::array();
  for (const RunSpec& r : c.runs) {
    runs.push_back({{"method", r.method},
                    {"arch_type", to_string(r.arch_type)},
                    {"latent_factor", r.latent_factor},
                    {"skip", r.skip}});
  }
  const TrainConfig& t = c.train;
  json train = {{"epochs", t.epochs},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"batch_size", t.batch_size},
                {"full_batch_below", t.full_batch_below},
                {"posterior_samples", t.posterior_samples},
                {"prior_variance", t.prior_variance},
                {"dropout_rate", t.dropout_rate},
                {"bbb_initial_log_variance", t.bbb_initial_log_variance}};
  const NNGPConfig& n = c.nngp;
  json nngp = {{"depth", n.depth},
               {"activation", nngp_activation_name(n.activation.kind)},
               {"alpha", n.activation.alpha},
               {"mc_samples", n.activation.mc_samples},
               {"weight_variance", n.weight_variance},
               {"bias_variance", n.bias_variance},
               {"jitter", n.jitter},
               {"mc_seed", n.mc_seed}};
  json j = {{"schema_version", c.schema_version},
            {"dataset", dataset},
            {"preprocess", pre},
            {"architecture", arch},
            {"runs", runs},
            {"train", train},
            {"nngp", nngp},
            {"seeds", c.seeds}};
  if (include_output) {
    json out = {{"dir", c.output.dir.string()},
                {"save_models", c.output.save_models},
                {"save_kernels", c.output.save_kernels}};
    if (c.output.grid) {
      json bounds = json::array();
      for (const AxisBounds& b : c.output.grid->bounds) bounds.push_back({b.lo, b.hi});
      out["grid"] = {{"bounds", bounds}, {"resolution", c.output.grid->resolution}, {"log", c.output.grid->log}};
    }
    j["output"] = out;
    j["workers"] = c.workers;
  }
  return j;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix preprocess_features(const Matrix& x, const PreprocessConfig& p) {
  if (!p.segment_start && !p.segment_end && p.downsample == 1) return x;
  // Row operations on the transposed matrix act on the feature axis.
  Matrix t = x.transpose();
  const std::size_t len = static_cast<std::size_t>(t.rows());
  t = segment(t, p.segment_start.value_or(0), p.segment_end.value_or(len));
  t = downsample(t, p.downsample);
  return t.transpose();
}

std::size_t column_index(const Dataset& d, const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ConfigError("column '" + name + "' not found in " + d.name);
}

std::vector<std::string> read_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Dataset drop_column(const Dataset& d, std::size_t col) {
  Dataset out;
  out.name = d.name;
  out.labels = d.labels;
  out.x.resize(d.x.rows(), d.x.cols() - 1);
  for (Eigen::Index c = 0, k = 0; c < d.x.cols(); ++c) {
    if (static_cast<std::size_t>(c) == col) continue;
    out.x.col(k++) = d.x.col(c);
  }
  return out;
}

std::string run_label(std::size_t index, const RunSpec& r, std::uint64_t seed) {
  std::ostringstream s;
  s << "run" << index << '_' << r.method << '_' << to_string(r.arch_type) << "_seed" << seed;
  return s.str();
}

}  // namespace

std::string ExperimentConfig::fingerprint() const {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_json(*this, false).dump());
  return s.str();
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
  }
  if (runs.empty()) throw ConfigError("config has an empty runs list");
  if (seeds.empty()) throw ConfigError("config has an empty seeds list");
  if (workers == 0) throw ConfigError("workers must be at least 1");
  if (preprocess.downsample == 0) throw ConfigError("downsample factor must be at least 1");
  if (architecture.undercomplete_factor <= 0.0 || architecture.overcomplete_factor <= 0.0) {
    throw ConfigError("latent factors must be positive");
  }
  if (dataset.source == DataSource::Toy && (dataset.n_inliers == 0)) throw ConfigError("n_inliers must be positive");
  if (dataset.source != DataSource::Toy && dataset.path.empty()) throw ConfigError("dataset.path is required");
  if (output.grid) {
    if (output.grid->bounds.empty() || output.grid->bounds.size() > 2) {
      throw ConfigError("grid bounds must cover 1 or 2 axes");
    }
    if (output.grid->resolution < 2) throw ConfigError("grid resolution must be at least 2");
  }
  try {
    for (const RunSpec& r : runs) {
      if (r.method == kNngpMethod) {
        nngp.validate();
        continue;
      }
      train_config_for(*this, r, 0).validate();
      if (r.latent_factor <= 0.0) throw ConfigError("latent_factor must be positive");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    check_keys(j, "root", {"schema_version", "dataset", "preprocess", "architecture", "runs", "train", "nngp", "seeds",
                           "output", "workers"});
    ExperimentConfig c;
    if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kConfigSchemaVersion) {
      throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
    }

    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, "dataset", {"source", "name", "inliers", "anomalies", "n_inliers", "n_anomalies", "noise",
                                "anomaly_noise", "path", "label_column", "deviation_column", "tukey_k"});
      const std::string source = d.value("source", "toy");
      if (source == "toy") {
        c.dataset.source = DataSource::Toy;
      } else if (source == "csv") {
        c.dataset.source = DataSource::Csv;
      } else if (source == "tukey") {
        c.dataset.source = DataSource::Tukey;
      } else {
        throw ConfigError("unknown dataset source '" + source + "'");
      }
      read(d, "name", c.dataset.name);
      if (d.contains("inliers")) c.dataset.inliers = parse_toy_kind(d.at("inliers").get<std::string>());
      if (d.contains("anomalies")) c.dataset.anomalies = parse_toy_kind(d.at("anomalies").get<std::string>());
      read(d, "n_inliers", c.dataset.n_inliers);
      read(d, "n_anomalies", c.dataset.n_anomalies);
      read(d, "noise", c.dataset.noise);
      read(d, "anomaly_noise", c.dataset.anomaly_noise);
      if (d.contains("path")) c.dataset.path = d.at("path").get<std::string>();
      read(d, "label_column", c.dataset.label_column);
      read(d, "deviation_column", c.dataset.deviation_column);
      read(d, "tukey_k", c.dataset.tukey_k);
    }
    if (c.dataset.name.empty()) {
      c.dataset.name = c.dataset.source == DataSource::Toy
                           ? std::string(to_string(c.dataset.inliers)) + "_vs_" + std::string(to_string(c.dataset.anomalies))
                           : c.dataset.path.stem().string();
    }

    if (j.contains("preprocess")) {
      const json& p = j.at("preprocess");
      check_keys(p, "preprocess", {"downsample", "segment_start", "segment_end", "scale"});
      read(p, "downsample", c.preprocess.downsample);
      if (p.contains("segment_start")) c.preprocess.segment_start = p.at("segment_start").get<std::size_t>();
      if (p.contains("segment_end")) c.preprocess.segment_end = p.at("segment_end").get<std::size_t>();
      read(p, "scale", c.preprocess.scale);
    }

    if (j.contains("architecture")) {
      const json& a = j.at("architecture");
      check_keys(a, "architecture", {"hidden_widths", "activation", "layer_norm", "skip_mode", "undercomplete_factor",
                                     "overcomplete_factor"});
      read(a, "hidden_widths", c.architecture.hidden_widths);
      if (a.contains("activation")) c.architecture.activation = parse_activation(a.at("activation").get<std::string>());
      read(a, "layer_norm", c.architecture.layer_norm);
      if (a.contains("skip_mode")) {
        const std::string m = a.at("skip_mode").get<std::string>();
        if (m != "concat" && m != "add") throw ConfigError("skip_mode must be 'concat' or 'add'");
        c.architecture.skip_mode = m == "add" ? SkipMode::Add : SkipMode::Concat;
      }
      read(a, "undercomplete_factor", c.architecture.undercomplete_factor);
      read(a, "overcomplete_factor", c.architecture.overcomplete_factor);
      if (c.architecture.undercomplete_factor >= 1.0 || c.architecture.overcomplete_factor < 1.0) {
        throw ConfigError("undercomplete_factor must be < 1 and overcomplete_factor >= 1");
      }
    }

    if (!j.contains("runs")) throw ConfigError("config lacks a runs list");
    c.runs = parse_runs(j.at("runs"), c.architecture);

    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t, "train", {"epochs", "lr", "weight_decay", "batch_size", "full_batch_below", "posterior_samples",
                              "prior_variance", "dropout_rate", "bbb_initial_log_variance"});
      read(t, "epochs", c.train.epochs);
      read(t, "lr", c.train.lr);
      read(t, "weight_decay", c.train.weight_decay);
      read(t, "batch_size", c.train.batch_size);
      read(t, "full_batch_below", c.train.full_batch_below);
      read(t, "posterior_samples", c.train.posterior_samples);
      read(t, "prior_variance", c.train.prior_variance);
      read(t, "dropout_rate", c.train.dropout_rate);
      read(t, "bbb_initial_log_variance", c.train.bbb_initial_log_variance);
    }

    if (j.contains("nngp")) {
      const json& n = j.at("nngp");
      check_keys(n, "nngp", {"depth", "activation", "alpha", "mc_samples", "weight_variance", "bias_variance",
                             "jitter", "mc_seed"});
      read(n, "depth", c.nngp.depth);
      if (n.contains("activation")) c.nngp.activation.kind = parse_nngp_activation(n.at("activation").get<std::string>());
      read(n, "alpha", c.nngp.activation.alpha);
      read(n, "mc_samples", c.nngp.activation.mc_samples);
      c.nngp.weight_variance = default_weight_variance(c.nngp.activation);
      read(n, "weight_variance", c.nngp.weight_variance);
      read(n, "bias_variance", c.nngp.bias_variance);
      read(n, "jitter", c.nngp.jitter);
      read(n, "mc_seed", c.nngp.mc_seed);
    }

    read(j, "seeds", c.seeds);

    if (j.contains("output")) {
      const json& o = j.at("output");
      check_keys(o, "output", {"dir", "save_models", "save_kernels", "grid"});
      if (o.contains("dir")) c.output.dir = o.at("dir").get<std::string>();
      read(o, "save_models", c.output.save_models);
      read(o, "save_kernels", c.output.save_kernels);
      if (o.contains("grid") && !o.at("grid").is_null()) {
        const json& g = o.at("grid");
        check_keys(g, "output.grid", {"bounds", "resolution", "log"});
        GridConfig grid;
        for (const json& b : g.at("bounds")) {
          const auto pair = b.get<std::vector<double>>();
          if (pair.size() != 2) throw ConfigError("each grid bound is a [lo, hi] pair");
          grid.bounds.push_back({pair[0], pair[1]});
        }
        read(g, "resolution", grid.resolution);
        read(g, "log", grid.log);
        c.output.grid = grid;
      }
    }
    read(j, "workers", c.workers);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string dump_config(const ExperimentConfig& config) { return to_json(config, true).dump(2); }

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  const DatasetConfig& d = config.dataset;
  Dataset inliers;
  Dataset anomalies;
  if (d.source == DataSource::Toy) {
    RngStream in_rng(seed, kInlierStream);
    RngStream an_rng(seed, kAnomalyStream);
    inliers = gen_toy(d.inliers, d.n_inliers, d.noise, in_rng);
    anomalies = d.n_anomalies > 0 ? gen_toy(d.anomalies, d.n_anomalies, d.anomaly_noise, an_rng)
                                  : Dataset{Matrix(0, inliers.x.cols()), std::nullopt, "none"};
  } else if (d.source == DataSource::Csv) {
    const Dataset all = load_csv(d.path, d.label_column);
    inliers = select_label(all, kInlier);
    anomalies = select_label(all, kAnomaly);
  } else {
    const auto header = read_header(d.path);
    Dataset all = load_csv(d.path);
    const std::size_t col = column_index(all, header, d.deviation_column);
    const Vector dev = all.x.col(static_cast<Eigen::Index>(col));
    for (Eigen::Index i = 0; i < dev.size(); ++i) {
      if (dev(i) < 0.0) throw ParameterError("deviation column must be nonnegative (absolute deviations)");
    }
    all.labels = tukey_fences_label(std::span<const double>(dev.data(), static_cast<std::size_t>(dev.size())), d.tukey_k);
    all = drop_column(all, col);
    inliers = select_label(all, kInlier);
    anomalies = select_label(all, kAnomaly);
  }
  if (inliers.size() == 0) throw ParameterError("dataset has no inliers");
  inliers.x = preprocess_features(inliers.x, config.preprocess);
  anomalies.x = anomalies.size() > 0 ? preprocess_features(anomalies.x, config.preprocess)
                                     : Matrix(0, inliers.x.cols());

  PreparedData out;
  out.split = split_70_30(inliers, anomalies, seed);
  out.split.train.name = out.split.test.name = d.name;
  if (config.preprocess.scale) {
    out.scaler = MinMaxScaler::fit(out.split.train.x);
    out.split.train.x = out.scaler->transform(out.split.train.x);
    out.split.test.x = out.scaler->transform(out.split.test.x);
  }
  return out;
}

TrainConfig train_config_for(const ExperimentConfig& config, const RunSpec& run, std::uint64_t seed) {
  TrainConfig t = config.train;
  t.method = parse_inference_method(run.method);
  t.seed = seed;
  if (t.method == InferenceMethod::Deterministic) t.posterior_samples = 1;
  return t;
}

ArchitectureSpec architecture_for(const ArchitectureConfig& arch, const RunSpec& run, std::size_t input_dim) {
  ArchitectureSpec s;
  s.input_dim = input_dim;
  s.hidden_widths = arch.hidden_widths;
  s.latent_factor = run.latent_factor;
  s.skip = run.skip;
  s.skip_mode = arch.skip_mode;
  s.activation = arch.activation;
  s.use_layer_norm = arch.layer_norm;
  s.validate();
  return s;
}

std::string to_json_line(const RunRecord& r) {
  json j = {{"fingerprint", r.fingerprint},
            {"dataset", r.dataset},
            {"method", r.method},
            {"arch_type", to_string(r.arch_type)},
            {"latent_factor", r.latent_factor},
            {"skip", r.skip},
            {"seed", r.seed},
            {"status", r.ok ? "ok" : "failed"},
            {"wall_time_ms", r.wall_time_ms}};
  if (r.ok) {
    j["auroc"] = r.auroc;
    j["train_nll"] = r.train_nll;
  } else {
    j["error"] = r.error;
  }
  return j.dump();
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path dir = config.output.dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());

  const std::string fp = config.fingerprint();
  const std::size_t n_runs = config.runs.size();
  const std::size_t n_seeds = config.seeds.size();
  ExperimentResult result;
  result.records.resize(n_runs * n_seeds);

  std::ofstream jsonl(dir / "results.jsonl", std::ios::app);
  if (!jsonl) throw IoError("cannot open '" + (dir / "results.jsonl").string() + "'");
  std::mutex write_mutex;

  parallel_for(result.records.size(), config.workers, [&](std::size_t task) {
    const RunSpec& run = config.runs[task / n_seeds];
    const std::uint64_t seed = config.seeds[task % n_seeds];
    RunRecord rec;
    rec.fingerprint = fp;
    rec.dataset = config.dataset.name;
    rec.method = run.method;
    rec.arch_type = run.arch_type;
    rec.latent_factor = run.latent_factor;
    rec.skip = run.skip;
    rec.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    try {
      const PreparedData data = prepare_data(config, seed);
      const Matrix& train_x = data.split.train.x;
      const Matrix& test_x = data.split.test.x;
      std::optional<TrainedModel> model;
      if (run.method == kNngpMethod) {
        model = TrainedModel::from_infinite(InfiniteAutoencoder(train_x, config.nngp), data.scaler);
      } else {
        const ArchitectureSpec spec = architecture_for(config.architecture, run, static_cast<std::size_t>(train_x.cols()));
        rec.arch_type = classify_architecture(spec);
        TrainConfig tc = train_config_for(config, run, seed);
        tc.workers = 1;
        model = TrainedModel::from_posterior(train(spec, train_x, tc), data.scaler);
      }
      const Vector test_scores = model->score(test_x);
      const std::vector<double> scores(test_scores.data(), test_scores.data() + test_scores.size());
      rec.auroc = auroc(scores, *data.split.test.labels);
      rec.train_nll = model->score(train_x).mean();
      if (!std::isfinite(rec.train_nll)) throw DivergenceError("non-finite training NLL");
      rec.ok = true;

      const std::string label = run_label(task / n_seeds, run, seed);
      if (config.output.save_models) save_model(*model, dir / (label + ".model.json"));
      if (config.output.grid && config.output.grid->bounds.size() == static_cast<std::size_t>(train_x.cols())) {
        const GridConfig& g = *config.output.grid;
        const ScoreGrid grid =
            score_grid([&](const Matrix& pts) { return model->score(pts); }, g.bounds, g.resolution, g.log);
        std::ofstream out(dir / (label + ".grid.csv"));
        if (!out) throw IoError("cannot write grid for " + label);
        write_grid_csv(grid, out);
      }
      if (config.output.save_kernels && run.method == kNngpMethod) {
        std::ofstream out(dir / (label + ".kernel.txt"));
        if (!out) throw IoError("cannot write kernel for " + label);
        write_kernel_text(kernel_matrix(train_x, config.nngp), out);
      }
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    rec.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    {
      std::lock_guard lock(write_mutex);
      jsonl << to_json_line(rec) << '\n';
      jsonl.flush();
    }
    result.records[task] = std::move(rec);
  });

  for (const RunRecord& r : result.records) {
    if (r.ok) {
      result.table.add(r.dataset, r.method, r.arch_type, r.auroc);
    } else {
      ++result.failures;
    }
  }

  // ATE over the (dataset, method) pairs that have a type-A baseline.
  ResultTable with_baseline;
  for (const auto& [key, values] : result.table.runs()) {
    if (!result.table.contains(CellKey{key.dataset, key.method, ArchitectureType::A})) continue;
    for (double v : values) with_baseline.add(key.dataset, key.method, key.arch_type, v);
  }
  result.ate = ate(with_baseline);

  std::ofstream csv(dir / "summary.csv");
  if (!csv) throw IoError("cannot write '" + (dir / "summary.csv").string() + "'");
  csv << std::setprecision(17);
  csv << "dataset,method,arch_type,mean_auroc,se_auroc,runs\n";
  for (const auto& [key, values] : result.table.runs()) {
    const Summary s = summary(values);
    csv << key.dataset << ',' << key.method << ',' << to_string(key.arch_type) << ',' << s.mean << ','
        << s.standard_error << ',' << s.count << '\n';
  }
  for (const auto& [type, value] : result.ate) {
    csv << "ATE,all," << to_string(type) << ',' << value << ",,\n";
  }
  return result;
}

LrRangeResult lr_range_test(const ArchitectureSpec& spec, const Matrix& data, double lr_min, double lr_max,
                            std::size_t steps, std::uint64_t seed) {
  if (!(lr_min > 0.0) || !(lr_max > 0.0)) throw ParameterError("learning rates must be positive");
  if (!(lr_min < lr_max)) throw ParameterError("lr_min must be smaller than lr_max");
  if (steps < 2) throw ParameterError("lr range test needs at least 2 steps");
  if (data.rows() == 0) throw ParameterError("lr range test needs data");
  if (static_cast<std::size_t>(data.cols()) != spec.input_dim) throw ShapeError("data does not match architecture");

  constexpr double kSmoothing = 0.98;
  constexpr double kDivergenceRatio = 4.0;

  RngStream init_rng(seed, 0);
  RngStream batch_rng(seed, 1);
  AutoencoderModel model = build(spec, init_rng);
  Vector params = model.parameters();
  OptimizerState state = OptimizerState::for_parameters(static_cast<std::size_t>(params.size()), lr_min, 0.0);

  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t batch = n < 256 ? n : 64;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;

  LrRangeResult res;
  double avg = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  const double ratio = std::log(lr_max / lr_min);
  for (std::size_t i = 0; i < steps; ++i) {
    const double lr = lr_min * std::exp(ratio * static_cast<double>(i) / static_cast<double>(steps - 1));
    if (cursor + batch > n) {
      if (batch < n) std::shuffle(order.begin(), order.end(), batch_rng.engine());
      cursor = 0;
    }
    Matrix xb(static_cast<Eigen::Index>(batch), data.cols());
    for (std::size_t r = 0; r < batch; ++r) xb.row(static_cast<Eigen::Index>(r)) = data.row(static_cast<Eigen::Index>(order[cursor + r]));
    cursor += batch;

    model.set_parameters(params);
    const ForwardTrace trace = forward_trace(model, xb);
    LossValue lv = evaluate_loss(LossKind::GaussianNll, trace.output, xb);
    const Vector grad = backward(model, trace, lv.grad);
    state.lr = lr;
    adam_step(params, grad, state);

    avg = kSmoothing * avg + (1.0 - kSmoothing) * lv.value;
    const double smoothed = avg / (1.0 - std::pow(kSmoothing, static_cast<double>(i + 1)));
    res.lrs.push_back(lr);
    res.smoothed_loss.push_back(smoothed);
    if (!std::isfinite(smoothed) || smoothed > kDivergenceRatio * best) {
      res.divergence_step = i;
      break;
    }
    if (smoothed < best) {
      best = smoothed;
      best_step = i;
    }
  }

  if (res.divergence_step) {
    const std::size_t immediate = std::max<std::size_t>(1, steps / 20);
    if (*res.divergence_step < immediate) {
      throw DivergenceError("loss diverged immediately in the lr range test; try a smaller lr_min");
    }
    res.suggested_lr = res.lrs[*res.divergence_step] / 10.0;
  } else {
    res.suggested_lr = res.lrs[best_step] / 10.0;
  }
  res.suggested_lr = std::clamp(res.suggested_lr, lr_min, lr_max);
  return res;
}

}  // namespace bae
