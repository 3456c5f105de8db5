#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "bae/bayes.hpp"
#include "bae/data.hpp"
#include "bae/nngp.hpp"

namespace bae {

/// A trained anomaly scorer: either a finite posterior or an infinitely-wide
/// autoencoder, plus the min-max scaler fitted on its training split.
class TrainedModel {
 public:
  static TrainedModel from_posterior(PosteriorEnsemble posterior, std::optional<MinMaxScaler> scaler = {});
  static TrainedModel from_infinite(InfiniteAutoencoder model, std::optional<MinMaxScaler> scaler = {});

  bool is_infinite() const { return infinite_.has_value(); }
  const PosteriorEnsemble& posterior() const;
  const InfiniteAutoencoder& infinite() const;
  const std::optional<MinMaxScaler>& scaler() const { return scaler_; }

  std::size_t input_dim() const;
  /// E[NLL] of already-scaled inputs.
  Vector score(const Matrix& x) const;
  /// Applies the stored scaler (if any) first.
  Vector score_raw(const Matrix& raw) const;

 private:
  std::optional<PosteriorEnsemble> posterior_;
  std::optional<InfiniteAutoencoder> infinite_;
  std::optional<MinMaxScaler> scaler_;
};

/// Model files are JSON documents starting with
///   {"format": "bae-model", "version": 1, "kind": "posterior"|"nngp", ...}
/// Posterior files also carry method, seed, M (posterior_samples) and the
/// architecture spec next to the parameters. Doubles round-trip exactly.
inline constexpr int kModelFormatVersion = 1;

void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

std::string serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(const std::string& text);

}  // namespace bae
