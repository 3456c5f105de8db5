#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bae/nn.hpp"
#include "bae/rng.hpp"

namespace bae {

inline constexpr int kInlier = 0;
inline constexpr int kAnomaly = 1;

struct Dataset {
  Matrix x;
  std::optional<std::vector<int>> labels;  // kInlier / kAnomaly per row
  std::string name;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
};

struct SplitDataset {
  Dataset train;  // inliers only
  Dataset test;   // held-out inliers followed by every anomaly, labeled
};

enum class ToyKind { Blobs, TwoMoons, Ring, Spiral, Bimodal1d, Trimodal1d };

std::string_view to_string(ToyKind kind);
ToyKind parse_toy_kind(std::string_view name);

/// Synthetic sets, unscaled:
///  blobs        2-D, round-robin over centers (0,0), (4,0), (2,3.5), Gaussian noise
///  two_moons    interleaved half circles, Gaussian noise
///  ring         circle of radius 2 around (0.5, 0.25), enclosing two_moons;
///               radial noise is a normal truncated at 3 standard deviations
///  spiral       two-armed Archimedean spiral
///  bimodal_1d   modes at -2 and 2
///  trimodal_1d  modes at -3, 0 and 3
Dataset gen_toy(ToyKind kind, std::size_t n, double noise, RngStream& rng);

inline constexpr double kRingRadius = 2.0;
inline constexpr double kRingCenterX = 0.5;
inline constexpr double kRingCenterY = 0.25;

/// Comma-separated, header row first, numeric cells with '.' decimals.
/// When `label_column` is set that column becomes the labels and is removed
/// from the features.
Dataset load_csv(const std::filesystem::path& path, const std::optional<std::string>& label_column = {});
Dataset parse_csv(std::string_view text, const std::optional<std::string>& label_column = {},
                  std::string name = "csv");
/// Header plus rows; labels, when present, are written as a trailing "label" column.
void write_csv(const Dataset& data, const std::filesystem::path& path, const std::vector<std::string>& header = {});

/// Rows carrying `label`.
Dataset select_label(const Dataset& data, int label);

/// Shuffles the inliers, puts floor(0.7 N) of them in train and the rest,
/// plus every anomaly, in test.
SplitDataset split_70_30(const Dataset& inliers, const Dataset& anomalies, std::uint64_t seed);

class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(Vector min, Vector max);

  static MinMaxScaler fit(const Matrix& train);

  bool fitted() const { return fitted_; }
  const Vector& min() const { return min_; }
  const Vector& max() const { return max_; }

  /// (x - min) / (max - min) without clamping; constant features map to 0.
  Matrix transform(const Matrix& x) const;

 private:
  Vector min_, max_;
  bool fitted_ = false;
};

inline MinMaxScaler scaler_fit(const Matrix& train) { return MinMaxScaler::fit(train); }
inline Matrix scaler_transform(const MinMaxScaler& scaler, const Matrix& x) { return scaler.transform(x); }

/// Quantile with linear interpolation at fractional index (n-1) q.
double quantile(std::vector<double> values, double q);

/// One-sided upper fence on nonnegative deviations: anomaly iff
/// value > Q3 + k IQR.
std::vector<int> tukey_fences_label(std::span<const double> deviations, double k = 1.5);

/// Keeps rows 0, factor, 2 factor, ...
Matrix downsample(const Matrix& series, std::size_t factor);
/// Rows [start, end).
Matrix segment(const Matrix& series, std::size_t start, std::size_t end);

}  // namespace bae
