#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "bae/nn.hpp"
#include "bae/rng.hpp"

namespace bae {

/// Activations understood by the kernel recursion. Identity, ReLU,
/// LeakyReLU and Erf have closed-form Gaussian expectations; GELU and SELU go
/// through a fixed-sample Monte-Carlo rule.
enum class NngpActivationKind { Identity, ReLU, LeakyReLU, Erf, GELU, SELU };

struct NngpActivation {
  NngpActivationKind kind = NngpActivationKind::LeakyReLU;
  double alpha = kLeakySlope;     // LeakyReLU negative slope
  std::size_t mc_samples = 100000;  // Monte-Carlo kinds only

  bool has_closed_form() const;
  double operator()(double x) const;
};

std::string to_string(const NngpActivation& activation);
/// Accepts "identity", "relu", "leaky_relu", "erf", "gelu", "selu".
NngpActivationKind parse_nngp_activation(std::string_view name);

/// Weight variance keeping the diagonal of the kernel fixed across depth:
/// 2/(1+alpha^2) for LeakyReLU, 2 for ReLU, 1 otherwise.
double default_weight_variance(const NngpActivation& activation);

struct NNGPConfig {
  std::size_t depth = 7;  // number of dense layers
  NngpActivation activation{};
  double weight_variance = default_weight_variance(NngpActivation{});
  double bias_variance = 0.0;
  double jitter = 1e-6;
  std::uint64_t mc_seed = 0;

  void validate() const;
};

/// sigma_w^2 <x, x'> / d + sigma_b^2.
double base_kernel(std::span<const double> x, std::span<const double> y, const NNGPConfig& config);

/// E[phi(u) phi(v)] for (u, v) ~ N(0, [[k11, k12], [k12, k22]]), closed form.
/// Throws DomainError for negative variances or |rho| > 1 + 1e-12, and
/// ParameterError for kinds without a closed form.
double activation_expectation(const NngpActivation& activation, double k11, double k12, double k22);

struct McEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo estimate of the same expectation with fresh draws from `rng`.
McEstimate mc_activation_expectation(const NngpActivation& activation, double k11, double k12, double k22,
                                     std::size_t n_samples, RngStream& rng);

/// Symmetric (or cross) NNGP covariance with the configuration it came from.
struct KernelMatrix {
  Matrix entries;
  NNGPConfig provenance;

  Eigen::Index size() const { return entries.rows(); }
};

/// Kernel of the last dense layer's pre-activations, K(X, X).
KernelMatrix kernel_matrix(const Matrix& x, const NNGPConfig& config);
/// Cross kernel K(X, Y); rows index X.
KernelMatrix kernel_matrix(const Matrix& x, const Matrix& y, const NNGPConfig& config);
/// Diagonal K(x_i, x_i) only.
Vector kernel_diagonal(const Matrix& x, const NNGPConfig& config);
/// K(X, X) after each dense layer, index 0 is the base kernel.
std::vector<Matrix> kernel_trajectory(const Matrix& x, const NNGPConfig& config);

struct GpPosterior {
  Matrix mean;      // queries x D
  Vector variance;  // per query
  double jitter_used = 0.0;
};

/// Exact GP regression: mean = K_st (K_tt + jitter I)^-1 targets via Cholesky,
/// variance = diag(K_ss) - diag(K_st (K_tt + jitter I)^-1 K_ts). Jitter is
/// multiplied by 10 up to three times before giving up with ConditioningError.
GpPosterior gp_posterior_reconstruct(const Matrix& k_tt, const Matrix& k_st, const Vector& k_ss_diag,
                                     const Matrix& targets, double jitter);

/// Infinitely-wide autoencoder: a GP with the NNGP kernel whose regression
/// targets are the training inputs. The sigmoid output layer is applied to
/// the GP mean, so targets enter in logit space (clamped to
/// [kTargetClamp, 1 - kTargetClamp]) and a training point reconstructs to
/// itself.
class InfiniteAutoencoder {
 public:
  static constexpr double kTargetClamp = 1e-3;

  InfiniteAutoencoder(Matrix train_x, NNGPConfig config);

  const Matrix& train_x() const { return train_x_; }
  const NNGPConfig& config() const { return config_; }
  double jitter_used() const { return jitter_used_; }

  Matrix reconstruct(const Matrix& x) const;
  /// Per-sample Gaussian NLL (unit variance) of the reconstruction.
  Vector score(const Matrix& x) const;

 private:
  Matrix train_x_;
  NNGPConfig config_;
  Eigen::LLT<Eigen::MatrixXd> factor_;
  Eigen::MatrixXd weights_;  // (K_tt + jitter I)^-1 targets
  double jitter_used_ = 0.0;
};

Vector infbae_score(const Matrix& x_star, const Matrix& train_x, const NNGPConfig& config);

/// Plain text: a header line "# nngp-kernel rows=R cols=C depth=L activation=..."
/// followed by R lines of C space-separated values (max precision).
void write_kernel_text(const KernelMatrix& kernel, std::ostream& out);
KernelMatrix read_kernel_text(std::istream& in);

}  // namespace bae
