#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

#include "bae/autoencoder.hpp"
#include "bae/nn.hpp"
#include "bae/rng.hpp"

namespace bae {

enum class InferenceMethod { Deterministic, McDropout, BayesByBackprop, AnchoredEnsemble, Vae };

std::string_view to_string(InferenceMethod method);
/// Accepts "deterministic", "mcd", "bbb", "ensemble", "vae".
InferenceMethod parse_inference_method(std::string_view name);

/// 100 for VAE, MCD and BBB; 10 for the anchored ensemble; 1 for a plain AE.
std::size_t default_posterior_samples(InferenceMethod method);

struct TrainConfig {
  InferenceMethod method = InferenceMethod::Deterministic;
  std::size_t epochs = 300;
  double lr = 1e-3;
  double weight_decay = 1e-10;
  std::size_t batch_size = 64;
  std::size_t full_batch_below = 256;  // datasets smaller than this train full-batch
  std::size_t posterior_samples = 0;   // 0 selects default_posterior_samples(method)
  double prior_variance = 1.0;
  double dropout_rate = 0.2;
  double bbb_initial_log_variance = -9.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::size_t samples() const;
  void validate() const;
};

struct TrainingHistory {
  std::vector<double> epoch_loss;
};

/// Approximate posterior. Depending on the method it stores explicit members
/// (deterministic: one, ensemble: M) or the state of a sampler (MCD: one
/// network plus mask streams, BBB: per-weight mean/log-variance, VAE: one
/// network with a stochastic latent). Sample m is always drawn from stream
/// (seed, kPredictionStream + m), so reconstructions are reproducible.
struct PosteriorEnsemble {
  static constexpr std::uint64_t kPredictionStream = 1ULL << 32;

  InferenceMethod method = InferenceMethod::Deterministic;
  ArchitectureSpec spec;
  std::size_t posterior_samples = 1;
  std::uint64_t seed = 0;
  double dropout_rate = 0.0;
  double prior_variance = 1.0;
  std::vector<AutoencoderModel> members;
  std::vector<Vector> anchors;      // anchored ensemble only
  Vector weight_mean;               // BBB only
  Vector weight_log_variance;       // BBB only

  std::size_t sample_count() const { return posterior_samples; }
};

/// Reconstruction of `x` under posterior sample m.
Matrix sample_reconstruction(const PosteriorEnsemble& posterior, const Matrix& x, std::size_t m);

/// Per-sample E_theta[NLL]: the mean over the M posterior samples of the
/// unit-variance Gaussian NLL. Reduction is in sample-index order.
Vector predictive_nll(const PosteriorEnsemble& posterior, const Matrix& x, std::size_t workers = 1);

/// Same, with an explicit list of per-sample reconstructions.
Vector predictive_nll(const Matrix& x, const std::vector<Matrix>& reconstructions);

/// KL(N(mean, exp(log_var)) || N(0, prior_variance)) summed over entries.
double gaussian_kl(const Vector& mean, const Vector& log_variance, double prior_variance);

/// Draws an anchor vector from N(0, prior_variance I).
Vector draw_anchor(std::size_t n, double prior_variance, RngStream& rng);

AutoencoderModel train_map(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                           TrainingHistory* history = nullptr);
PosteriorEnsemble train_deterministic(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                                      TrainingHistory* history = nullptr);
PosteriorEnsemble train_anchored_ensemble(const ArchitectureSpec& spec, const Matrix& data,
                                          const TrainConfig& cfg);
PosteriorEnsemble train_bbb(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                            TrainingHistory* history = nullptr);
PosteriorEnsemble train_mcd(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                            TrainingHistory* history = nullptr);
PosteriorEnsemble train_vae(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                            TrainingHistory* history = nullptr);

/// Dispatches on cfg.method.
PosteriorEnsemble train(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg);

}  // namespace bae
