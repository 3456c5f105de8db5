#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "bae/nn.hpp"
#include "bae/rng.hpp"

namespace bae {

/// Bottleneck taxonomy. A is the only bottlenecked type.
enum class ArchitectureType { A, B, C, D };

std::string_view to_string(ArchitectureType type);
ArchitectureType parse_architecture_type(std::string_view name);

enum class SkipMode { Concat, Add };

struct ArchitectureSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;  // encoder side; the decoder mirrors them
  double latent_factor = 1.0;
  bool skip = false;
  SkipMode skip_mode = SkipMode::Concat;
  ActivationKind activation = ActivationKind::LeakyReLU;
  bool use_layer_norm = true;
  ActivationKind final_activation = ActivationKind::Sigmoid;

  /// round-half-up(latent_factor * input_dim), never below 1.
  std::size_t latent_dim() const;
  /// latent_dim >= input_dim.
  bool overcomplete() const;
  /// Throws ParameterError for zero widths, nonpositive factors and the like.
  void validate() const;
};

ArchitectureType classify_architecture(const ArchitectureSpec& spec);

/// Encoder/decoder parameter sets. The last encoder layer produces the latent
/// code; for a variational model it is the latent-mean projection and
/// `latent_log_variance` holds the matching log-variance projection.
struct AutoencoderModel {
  ArchitectureSpec spec;
  std::vector<LayerParams> encoder;
  std::optional<LayerParams> latent_log_variance;
  std::vector<LayerParams> decoder;

  bool variational() const { return latent_log_variance.has_value(); }
  std::size_t parameter_count() const;
  Vector parameters() const;
  void set_parameters(const Vector& flat);
};

/// Fresh model with Kaiming-initialized weights. Layer norm, when enabled,
/// sits on the hidden layers only: the latent layer and the sigmoid output
/// layer are plain linear -> activation.
AutoencoderModel build(const ArchitectureSpec& spec, RngStream& rng, bool variational = false);

/// Deterministic reconstruction. Variational models decode the latent mean.
Matrix forward(const AutoencoderModel& model, const Matrix& x);

/// Per-sample negative log-likelihood under N(x_hat, sigma2 I), averaged over
/// the feature dimension: (1/D) sum_i [(x_i - x_hat_i)^2 / (2 sigma2) + log(sigma2)/2].
Vector nll_gaussian(const Matrix& x, const Matrix& x_hat, double sigma2 = 1.0);

struct ForwardOptions {
  double dropout_rate = 0.0;      // > 0 draws masks from `rng`
  bool sample_latent = false;     // variational models: z = mu + sigma * eps
  RngStream* rng = nullptr;
};

struct ForwardTrace {
  std::vector<DenseCache> encoder;
  std::vector<DenseCache> decoder;
  std::vector<Matrix> encoder_masks;  // empty matrices when dropout is off
  std::vector<Matrix> decoder_masks;
  std::vector<Matrix> encoder_outputs;  // post-dropout
  std::optional<DenseCache> log_variance;
  Matrix noise;  // reparameterization draw, empty unless sampled
  Matrix latent;
  Matrix output;
};

ForwardTrace forward_trace(const AutoencoderModel& model, const Matrix& x,
                           const ForwardOptions& options = {});

/// Gradient of a loss with respect to all model parameters (flat, in
/// `AutoencoderModel::parameters()` order), given d loss / d output.
/// `latent_kl_weight` adds weight * mean-over-rows KL(q(z|x) || N(0, I)) for
/// variational models.
Vector backward(const AutoencoderModel& model, const ForwardTrace& trace, const Matrix& grad_output,
                double latent_kl_weight = 0.0);

/// Per-row KL(N(mu, exp(log_var)) || N(0, I)).
Vector latent_kl(const Matrix& mu, const Matrix& log_var);

}  // namespace bae
