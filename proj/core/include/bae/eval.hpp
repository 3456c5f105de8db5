#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "bae/autoencoder.hpp"
#include "bae/data.hpp"
#include "bae/nn.hpp"

namespace bae {

/// Probability that a random anomaly (label 1) outscores a random inlier,
/// counting ties as one half. Mann-Whitney statistic with midranks, O(n log n).
double auroc(std::span<const double> scores, std::span<const int> labels);

struct Summary {
  double mean = 0.0;
  double standard_error = 0.0;  // sample sd (n - 1) / sqrt(n); 0 for n = 1
  std::size_t count = 0;
};

Summary summary(std::span<const double> values);

struct ScoreReport {
  std::vector<double> scores;
  std::vector<int> labels;
  double auroc = 0.0;
  std::string model;
  ArchitectureType arch_type = ArchitectureType::A;
  std::uint64_t seed = 0;

  static ScoreReport make(std::vector<double> scores, std::vector<int> labels, std::string model,
                          ArchitectureType type, std::uint64_t seed);
};

struct CellKey {
  std::string dataset;
  std::string method;
  ArchitectureType arch_type = ArchitectureType::A;

  auto operator<=>(const CellKey&) const = default;
};

/// AUROC runs grouped by (dataset, method, architecture type).
class ResultTable {
 public:
  void add(const std::string& dataset, const std::string& method, ArchitectureType type, double auroc);
  /// Sets a cell to a single precomputed mean (e.g. a published column mean).
  void set_mean(const std::string& dataset, const std::string& method, ArchitectureType type, double mean);

  Summary cell(const CellKey& key) const;
  bool contains(const CellKey& key) const { return runs_.contains(key); }
  const std::map<CellKey, std::vector<double>>& runs() const { return runs_; }

 private:
  std::map<CellKey, std::vector<double>> runs_;
};

/// Average treatment effect of B, C and D over A: for each type T, the mean
/// over (dataset, method) pairs holding T of mean AUROC(T) - mean AUROC(A).
/// Throws MetricError when a pair has T but no A baseline.
std::map<ArchitectureType, double> ate(const ResultTable& table);

struct AxisBounds {
  double lo = 0.0;
  double hi = 1.0;
};

using Scorer = std::function<Vector(const Matrix&)>;

struct ScoreGrid {
  std::vector<AxisBounds> bounds;
  std::size_t resolution = 0;
  Matrix points;  // resolution^dims x dims, first axis outermost
  Vector scores;
  bool log_scale = false;
};

inline constexpr double kLogGridOffset = 1e-12;

/// Evaluates the scorer on a regular lattice over 1-D or 2-D bounds,
/// optionally as log(score + 1e-12).
ScoreGrid score_grid(const Scorer& scorer, std::span<const AxisBounds> bounds, std::size_t resolution,
                     bool log_transform = false);

/// CSV with columns x[,y],score.
void write_grid_csv(const ScoreGrid& grid, std::ostream& out);

}  // namespace bae
