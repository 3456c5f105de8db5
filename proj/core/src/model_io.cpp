#include "bae/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bae/error.hpp"

namespace bae {

using nlohmann::json;

TrainedModel TrainedModel::from_posterior(PosteriorEnsemble posterior, std::optional<MinMaxScaler> scaler) {
  TrainedModel m;
  m.posterior_ = std::move(posterior);
  m.scaler_ = std::move(scaler);
  return m;
}

TrainedModel TrainedModel::from_infinite(InfiniteAutoencoder model, std::optional<MinMaxScaler> scaler) {
  TrainedModel m;
  m.infinite_ = std::move(model);
  m.scaler_ = std::move(scaler);
  return m;
}

const PosteriorEnsemble& TrainedModel::posterior() const {
  if (!posterior_) throw ParameterError("model is not a finite posterior");
  return *posterior_;
}

const InfiniteAutoencoder& TrainedModel::infinite() const {
  if (!infinite_) throw ParameterError("model is not an infinite-width autoencoder");
  return *infinite_;
}

std::size_t TrainedModel::input_dim() const {
  return infinite_ ? static_cast<std::size_t>(infinite_->train_x().cols()) : posterior_->spec.input_dim;
}

Vector TrainedModel::score(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != input_dim()) {
    throw ShapeError("model expects D=" + std::to_string(input_dim()) + ", data has D=" + std::to_string(x.cols()));
  }
  if (x.rows() == 0) throw ParameterError("nothing to score");
  return infinite_ ? infinite_->score(x) : predictive_nll(*posterior_, x);
}

Vector TrainedModel::score_raw(const Matrix& raw) const {
  if (static_cast<std::size_t>(raw.cols()) != input_dim()) {
    throw ShapeError("model expects D=" + std::to_string(input_dim()) + ", data has D=" + std::to_string(raw.cols()));
  }
  return score(scaler_ ? scaler_->transform(raw) : raw);
}

namespace {

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix json_matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("model file: matrix size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json layer_json(const LayerParams& l) {
  json j = {{"weights", matrix_json(l.weights)}};
  j["norm_gain"] = l.norm_gain ? vec_json(*l.norm_gain) : json(nullptr);
  j["norm_bias"] = l.norm_bias ? vec_json(*l.norm_bias) : json(nullptr);
  return j;
}

LayerParams json_layer(const json& j) {
  LayerParams l;
  l.weights = json_matrix(j.at("weights"));
  if (!j.at("norm_gain").is_null()) l.norm_gain = json_vec(j.at("norm_gain"));
  if (!j.at("norm_bias").is_null()) l.norm_bias = json_vec(j.at("norm_bias"));
  return l;
}

json spec_json(const ArchitectureSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_widths", s.hidden_widths},
          {"latent_factor", s.latent_factor},
          {"latent_dim", s.latent_dim()},
          {"skip", s.skip},
          {"skip_mode", s.skip_mode == SkipMode::Concat ? "concat" : "add"},
          {"activation", std::string(to_string(s.activation))},
          {"layer_norm", s.use_layer_norm},
          {"final_activation", std::string(to_string(s.final_activation))},
          {"arch_type", std::string(to_string(classify_architecture(s)))}};
}

ArchitectureSpec json_spec(const json& j) {
  ArchitectureSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  s.latent_factor = j.at("latent_factor").get<double>();
  s.skip = j.at("skip").get<bool>();
  s.skip_mode = j.at("skip_mode").get<std::string>() == "add" ? SkipMode::Add : SkipMode::Concat;
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.use_layer_norm = j.at("layer_norm").get<bool>();
  s.final_activation = parse_activation(j.at("final_activation").get<std::string>());
  s.validate();
  return s;
}

json nngp_json(const NNGPConfig& c) {
  std::string kind;
  switch (c.activation.kind) {
    case NngpActivationKind::Identity: kind = "identity"; break;
    case NngpActivationKind::ReLU: kind = "relu"; break;
    case NngpActivationKind::LeakyReLU: kind = "leaky_relu"; break;
    case NngpActivationKind::Erf: kind = "erf"; break;
    case NngpActivationKind::GELU: kind = "gelu"; break;
    case NngpActivationKind::SELU: kind = "selu"; break;
  }
  return {{"depth", c.depth},
          {"activation", kind},
          {"alpha", c.activation.alpha},
          {"mc_samples", c.activation.mc_samples},
          {"weight_variance", c.weight_variance},
          {"bias_variance", c.bias_variance},
          {"jitter", c.jitter},
          {"mc_seed", c.mc_seed}};
}

NNGPConfig json_nngp(const json& j) {
  NNGPConfig c;
  c.depth = j.at("depth").get<std::size_t>();
  c.activation.kind = parse_nngp_activation(j.at("activation").get<std::string>());
  c.activation.alpha = j.at("alpha").get<double>();
  c.activation.mc_samples = j.at("mc_samples").get<std::size_t>();
  c.weight_variance = j.at("weight_variance").get<double>();
  c.bias_variance = j.at("bias_variance").get<double>();
  c.jitter = j.at("jitter").get<double>();
  c.mc_seed = j.at("mc_seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string serialize_model(const TrainedModel& model) {
  json j = {{"format", "bae-model"}, {"version", kModelFormatVersion}};
  if (model.is_infinite()) {
    const InfiniteAutoencoder& inf = model.infinite();
    j["kind"] = "nngp";
    j["nngp"] = nngp_json(inf.config());
    j["train_x"] = matrix_json(inf.train_x());
  } else {
    const PosteriorEnsemble& p = model.posterior();
    j["kind"] = "posterior";
    j["method"] = std::string(to_string(p.method));
    j["seed"] = p.seed;
    j["M"] = p.posterior_samples;
    j["spec"] = spec_json(p.spec);
    j["dropout_rate"] = p.dropout_rate;
    j["prior_variance"] = p.prior_variance;
    json members = json::array();
    for (const AutoencoderModel& m : p.members) {
      json enc = json::array();
      for (const auto& l : m.encoder) enc.push_back(layer_json(l));
      json dec = json::array();
      for (const auto& l : m.decoder) dec.push_back(layer_json(l));
      members.push_back({{"encoder", enc},
                         {"latent_log_variance", m.latent_log_variance ? layer_json(*m.latent_log_variance) : json(nullptr)},
                         {"decoder", dec}});
    }
    j["members"] = members;
    if (p.method == InferenceMethod::BayesByBackprop) {
      j["bbb"] = {{"mean", vec_json(p.weight_mean)}, {"log_variance", vec_json(p.weight_log_variance)}};
    }
  }
  if (model.scaler()) {
    j["scaler"] = {{"min", vec_json(model.scaler()->min())}, {"max", vec_json(model.scaler()->max())}};
  } else {
    j["scaler"] = nullptr;
  }
  return j.dump();
}

TrainedModel deserialize_model(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "bae-model") throw ParseError("not a bae model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw ParseError("unsupported model file version " + std::to_string(version));
    }
    std::optional<MinMaxScaler> scaler;
    if (!j.at("scaler").is_null()) {
      scaler = MinMaxScaler(json_vec(j.at("scaler").at("min")), json_vec(j.at("scaler").at("max")));
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "nngp") {
      return TrainedModel::from_infinite(InfiniteAutoencoder(json_matrix(j.at("train_x")), json_nngp(j.at("nngp"))),
                                         std::move(scaler));
    }
    if (kind != "posterior") throw ParseError("unknown model kind '" + kind + "'");
    PosteriorEnsemble p;
    p.method = parse_inference_method(j.at("method").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.posterior_samples = j.at("M").get<std::size_t>();
    p.spec = json_spec(j.at("spec"));
    p.dropout_rate = j.at("dropout_rate").get<double>();
    p.prior_variance = j.at("prior_variance").get<double>();
    for (const json& mj : j.at("members")) {
      AutoencoderModel m;
      m.spec = p.spec;
      for (const json& l : mj.at("encoder")) m.encoder.push_back(json_layer(l));
      if (!mj.at("latent_log_variance").is_null()) m.latent_log_variance = json_layer(mj.at("latent_log_variance"));
      for (const json& l : mj.at("decoder")) m.decoder.push_back(json_layer(l));
      p.members.push_back(std::move(m));
    }
    if (p.members.empty()) throw ParseError("model file holds no networks");
    if (p.method == InferenceMethod::BayesByBackprop) {
      p.weight_mean = json_vec(j.at("bbb").at("mean"));
      p.weight_log_variance = json_vec(j.at("bbb").at("log_variance"));
    }
    if (p.method == InferenceMethod::AnchoredEnsemble && p.members.size() != p.posterior_samples) {
      throw ParseError("ensemble member count does not match M");
    }
    return TrainedModel::from_posterior(std::move(p), std::move(scaler));
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file '" + path.string() + "'");
  out << serialize_model(model) << '\n';
  if (!out) throw IoError("failed writing model file '" + path.string() + "'");
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read model file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace bae
