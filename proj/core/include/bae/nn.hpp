#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bae/rng.hpp"

namespace bae {

// Row-major so that one row is one sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluScale = 1.0507009873554805;
inline constexpr double kLayerNormEps = 1e-5;

enum class ActivationKind { Identity, LeakyReLU, SELU, Sigmoid, GELU };

std::string_view to_string(ActivationKind kind);
/// Accepts "identity", "leaky_relu", "selu", "sigmoid", "gelu".
ActivationKind parse_activation(std::string_view name);

double activate(ActivationKind kind, double x);
/// d activate / dx evaluated at the pre-activation value.
double activation_derivative(ActivationKind kind, double x);
Matrix activation_apply(ActivationKind kind, const Matrix& x);

/// Parameters of one dense layer. There is no additive bias on the linear
/// map; the optional layer-norm affine pair is the only per-feature offset.
struct LayerParams {
  Matrix weights;  // out x in
  std::optional<Vector> norm_gain;
  std::optional<Vector> norm_bias;

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
  bool has_norm() const { return norm_gain.has_value(); }
  std::size_t parameter_count() const;
  /// Same shape, all zeros. Used as a gradient accumulator.
  LayerParams zeros_like() const;
};

/// Kaiming fan-in Gaussian weights; norm gain 1 and bias 0 when `with_norm`.
LayerParams init_layer(std::size_t in_dim, std::size_t out_dim, bool with_norm, RngStream& rng);

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias,
                  double eps = kLayerNormEps);

/// linear -> (layer norm) -> activation.
Matrix dense_forward(const Matrix& input, const LayerParams& layer, ActivationKind activation,
                     bool use_norm);

/// Intermediate values of a dense layer kept for the backward pass.
struct DenseCache {
  Matrix input;
  Matrix normalized;  // x_hat of layer norm, empty without norm
  Vector inv_std;     // per row, empty without norm
  Matrix pre_activation;
  Matrix output;
};

DenseCache dense_forward_cached(const Matrix& input, const LayerParams& layer,
                                ActivationKind activation, bool use_norm);

/// Backpropagates `grad_output` through one dense layer. Parameter gradients
/// are added into `grads`; the gradient with respect to the layer input is
/// returned.
Matrix dense_backward(const DenseCache& cache, const LayerParams& layer, ActivationKind activation,
                      const Matrix& grad_output, LayerParams& grads);

struct DenseLayer {
  LayerParams params;
  ActivationKind activation = ActivationKind::Identity;
  bool use_norm = false;
};

using Network = std::vector<DenseLayer>;

Matrix forward(const Network& network, const Matrix& input);

enum class LossKind {
  HalfSquaredError,  // (1/N) sum_rows 1/2 ||y - t||^2
  GaussianNll,       // (1/N) sum_rows (1/(2D)) ||y - t||^2, unit variance
};

struct LossValue {
  double value = 0.0;
  Matrix grad;  // d value / d prediction
};

LossValue evaluate_loss(LossKind kind, const Matrix& prediction, const Matrix& target);

struct Gradients {
  double loss = 0.0;
  std::vector<LayerParams> layers;
};

Gradients backprop(const Network& network, const Matrix& input, const Matrix& target,
                   LossKind loss);

// Flat parameter views. Order per layer: weights (row-major), gain, bias.
std::size_t parameter_count(std::span<const LayerParams> layers);
void append_parameters(const LayerParams& layer, Vector& out, std::size_t& offset);
void read_parameters(LayerParams& layer, const Vector& in, std::size_t& offset);
Vector flatten(std::span<const LayerParams> layers);
void unflatten(const Vector& flat, std::span<LayerParams> layers);

struct OptimizerState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_parameters(std::size_t n, double lr, double weight_decay);
};

/// One Adam step with coupled L2 decay: the gradient becomes
/// g + weight_decay * params before the moments are updated.
void adam_step(Vector& params, const Vector& grads, OptimizerState& state);

/// As above but decays toward `anchor` instead of zero.
void adam_step(Vector& params, const Vector& grads, OptimizerState& state, const Vector& anchor);

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, RngStream& rng);

}  // namespace bae
