#include "bae/nn.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "bae/error.hpp"

namespace bae {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::LeakyReLU: return "leaky_relu";
    case ActivationKind::SELU: return "selu";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::GELU: return "gelu";
  }
  return "unknown";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "identity") return ActivationKind::Identity;
  if (name == "leaky_relu") return ActivationKind::LeakyReLU;
  if (name == "selu") return ActivationKind::SELU;
  if (name == "sigmoid") return ActivationKind::Sigmoid;
  if (name == "gelu") return ActivationKind::GELU;
  throw ParameterError("unknown activation '" + std::string(name) + "'");
}

double activate(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::Identity: return x;
    case ActivationKind::LeakyReLU: return x > 0.0 ? x : kLeakySlope * x;
    case ActivationKind::SELU: return x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x);
    case ActivationKind::Sigmoid:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case ActivationKind::GELU: return 0.5 * x * std::erfc(-x / std::numbers::sqrt2);
  }
  return x;
}

double activation_derivative(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::Identity: return 1.0;
    case ActivationKind::LeakyReLU: return x > 0.0 ? 1.0 : kLeakySlope;
    case ActivationKind::SELU: return x > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(x);
    case ActivationKind::Sigmoid: {
      const double s = activate(ActivationKind::Sigmoid, x);
      return s * (1.0 - s);
    }
    case ActivationKind::GELU: {
      const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
      const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
      return cdf + x * pdf;
    }
  }
  return 1.0;
}

Matrix activation_apply(ActivationKind kind, const Matrix& x) {
  return x.unaryExpr([kind](double v) { return activate(kind, v); });
}

std::size_t LayerParams::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(weights.size());
  if (norm_gain) n += static_cast<std::size_t>(norm_gain->size());
  if (norm_bias) n += static_cast<std::size_t>(norm_bias->size());
  return n;
}

LayerParams LayerParams::zeros_like() const {
  LayerParams z;
  z.weights = Matrix::Zero(weights.rows(), weights.cols());
  if (norm_gain) z.norm_gain = Vector::Zero(norm_gain->size());
  if (norm_bias) z.norm_bias = Vector::Zero(norm_bias->size());
  return z;
}

LayerParams init_layer(std::size_t in_dim, std::size_t out_dim, bool with_norm, RngStream& rng) {
  if (in_dim == 0 || out_dim == 0) throw ParameterError("layer dimensions must be positive");
  LayerParams layer;
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim));
  layer.weights.resize(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim));
  for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.normal(0.0, stddev);
  if (with_norm) {
    layer.norm_gain = Vector::Ones(static_cast<Eigen::Index>(out_dim));
    layer.norm_bias = Vector::Zero(static_cast<Eigen::Index>(out_dim));
  }
  return layer;
}

namespace {

struct NormResult {
  Matrix normalized;
  Vector inv_std;
};

NormResult normalize_rows(const Matrix& x, double eps) {
  NormResult r;
  r.normalized.resize(x.rows(), x.cols());
  r.inv_std.resize(x.rows());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / n;
    const double var = (x.row(i).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    r.inv_std(i) = inv;
    r.normalized.row(i) = (x.row(i).array() - mean) * inv;
  }
  return r;
}

void check_input(const Matrix& input, const LayerParams& layer) {
  if (input.cols() != layer.weights.cols()) {
    throw ShapeError("dense layer expects " + std::to_string(layer.weights.cols()) +
                     " input features, got " + std::to_string(input.cols()));
  }
}

}  // namespace

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, double eps) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw ShapeError("layer_norm gain/bias length must equal the feature count");
  }
  NormResult r = normalize_rows(x, eps);
  return (r.normalized.array().rowwise() * gain.transpose().array()).rowwise() +
         bias.transpose().array();
}

DenseCache dense_forward_cached(const Matrix& input, const LayerParams& layer,
                                ActivationKind activation, bool use_norm) {
  check_input(input, layer);
  DenseCache cache;
  cache.input = input;
  Matrix linear = input * layer.weights.transpose();
  if (use_norm) {
    if (!layer.has_norm()) throw ParameterError("layer has no norm parameters");
    NormResult r = normalize_rows(linear, kLayerNormEps);
    cache.pre_activation = (r.normalized.array().rowwise() * layer.norm_gain->transpose().array())
                               .rowwise() +
                           layer.norm_bias->transpose().array();
    cache.normalized = std::move(r.normalized);
    cache.inv_std = std::move(r.inv_std);
  } else {
    cache.pre_activation = std::move(linear);
  }
  cache.output = activation_apply(activation, cache.pre_activation);
  return cache;
}

Matrix dense_forward(const Matrix& input, const LayerParams& layer, ActivationKind activation,
                     bool use_norm) {
  return dense_forward_cached(input, layer, activation, use_norm).output;
}

Matrix dense_backward(const DenseCache& cache, const LayerParams& layer, ActivationKind activation,
                      const Matrix& grad_output, LayerParams& grads) {
  if (grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols()) {
    throw ShapeError("dense_backward: gradient shape does not match layer output");
  }
  Matrix grad_pre = grad_output.array() *
                    cache.pre_activation
                        .unaryExpr([activation](double v) { return activation_derivative(activation, v); })
                        .array();
  Matrix grad_linear;
  if (cache.normalized.size() > 0) {
    const Vector& gain = *layer.norm_gain;
    *grads.norm_gain += (grad_pre.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
    *grads.norm_bias += grad_pre.colwise().sum().transpose();
    const Matrix grad_hat = grad_pre.array().rowwise() * gain.transpose().array();
    const double n = static_cast<double>(grad_hat.cols());
    grad_linear.resize(grad_hat.rows(), grad_hat.cols());
    for (Eigen::Index i = 0; i < grad_hat.rows(); ++i) {
      const double sum_g = grad_hat.row(i).sum();
      const double sum_gx = grad_hat.row(i).dot(cache.normalized.row(i));
      grad_linear.row(i) = (cache.inv_std(i) / n) *
                           (n * grad_hat.row(i).array() - sum_g -
                            cache.normalized.row(i).array() * sum_gx);
    }
  } else {
    grad_linear = std::move(grad_pre);
  }
  grads.weights.noalias() += grad_linear.transpose() * cache.input;
  return grad_linear * layer.weights;
}

Matrix forward(const Network& network, const Matrix& input) {
  Matrix h = input;
  for (const DenseLayer& layer : network) h = dense_forward(h, layer.params, layer.activation, layer.use_norm);
  return h;
}

LossValue evaluate_loss(LossKind kind, const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ShapeError("loss: prediction and target shapes differ");
  }
  const double rows = static_cast<double>(prediction.rows());
  const double scale = kind == LossKind::HalfSquaredError
                           ? 1.0 / rows
                           : 1.0 / (rows * static_cast<double>(prediction.cols()));
  const Matrix residual = prediction - target;
  LossValue out;
  out.value = 0.5 * scale * residual.squaredNorm();
  out.grad = scale * residual;
  return out;
}

Gradients backprop(const Network& network, const Matrix& input, const Matrix& target,
                   LossKind loss) {
  std::vector<DenseCache> caches;
  caches.reserve(network.size());
  Matrix h = input;
  for (const DenseLayer& layer : network) {
    caches.push_back(dense_forward_cached(h, layer.params, layer.activation, layer.use_norm));
    h = caches.back().output;
  }
  LossValue lv = evaluate_loss(loss, h, target);
  Gradients g;
  g.loss = lv.value;
  g.layers.reserve(network.size());
  for (const DenseLayer& layer : network) g.layers.push_back(layer.params.zeros_like());
  Matrix grad = std::move(lv.grad);
  for (std::size_t k = network.size(); k-- > 0;) {
    grad = dense_backward(caches[k], network[k].params, network[k].activation, grad, g.layers[k]);
  }
  return g;
}

std::size_t parameter_count(std::span<const LayerParams> layers) {
  std::size_t n = 0;
  for (const LayerParams& l : layers) n += l.parameter_count();
  return n;
}

void append_parameters(const LayerParams& layer, Vector& out, std::size_t& offset) {
  const auto put = [&](const double* data, Eigen::Index size) {
    out.segment(static_cast<Eigen::Index>(offset), size) = Eigen::Map<const Vector>(data, size);
    offset += static_cast<std::size_t>(size);
  };
  put(layer.weights.data(), layer.weights.size());
  if (layer.norm_gain) put(layer.norm_gain->data(), layer.norm_gain->size());
  if (layer.norm_bias) put(layer.norm_bias->data(), layer.norm_bias->size());
}

void read_parameters(LayerParams& layer, const Vector& in, std::size_t& offset) {
  const auto get = [&](double* data, Eigen::Index size) {
    Eigen::Map<Vector>(data, size) = in.segment(static_cast<Eigen::Index>(offset), size);
    offset += static_cast<std::size_t>(size);
  };
  get(layer.weights.data(), layer.weights.size());
  if (layer.norm_gain) get(layer.norm_gain->data(), layer.norm_gain->size());
  if (layer.norm_bias) get(layer.norm_bias->data(), layer.norm_bias->size());
}

Vector flatten(std::span<const LayerParams> layers) {
  Vector out(static_cast<Eigen::Index>(parameter_count(layers)));
  std::size_t offset = 0;
  for (const LayerParams& l : layers) append_parameters(l, out, offset);
  return out;
}

void unflatten(const Vector& flat, std::span<LayerParams> layers) {
  std::size_t total = 0;
  for (const LayerParams& l : layers) total += l.parameter_count();
  if (static_cast<std::size_t>(flat.size()) != total) throw ShapeError("unflatten: parameter count mismatch");
  std::size_t offset = 0;
  for (LayerParams& l : layers) read_parameters(l, flat, offset);
}

OptimizerState OptimizerState::for_parameters(std::size_t n, double lr, double weight_decay) {
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (weight_decay < 0.0) throw ParameterError("weight decay must be nonnegative");
  OptimizerState s;
  s.first_moment = Vector::Zero(static_cast<Eigen::Index>(n));
  s.second_moment = Vector::Zero(static_cast<Eigen::Index>(n));
  s.lr = lr;
  s.weight_decay = weight_decay;
  return s;
}

namespace {

void adam_apply(Vector& params, const Vector& g, OptimizerState& s) {
  if (s.first_moment.size() != params.size() || s.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameters");
  }
  ++s.step_count;
  s.first_moment = s.beta1 * s.first_moment + (1.0 - s.beta1) * g;
  s.second_moment = s.beta2 * s.second_moment + (1.0 - s.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
  params.array() -= s.lr * (s.first_moment.array() / c1) /
                    ((s.second_moment.array() / c2).sqrt() + s.eps);
}

}  // namespace

void adam_step(Vector& params, const Vector& grads, OptimizerState& state) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient size mismatch");
  if (state.weight_decay == 0.0) {
    adam_apply(params, grads, state);
  } else {
    adam_apply(params, grads + state.weight_decay * params, state);
  }
}

void adam_step(Vector& params, const Vector& grads, OptimizerState& state, const Vector& anchor) {
  if (grads.size() != params.size() || anchor.size() != params.size()) {
    throw ShapeError("adam_step: gradient or anchor size mismatch");
  }
  adam_apply(params, grads + state.weight_decay * (params - anchor), state);
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  Matrix mask(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (rate == 0.0) {
    mask.setOnes();
    return mask;
  }
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

}  // namespace bae
