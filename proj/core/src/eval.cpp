#include "bae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "bae/error.hpp"

namespace bae {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != kAnomaly && l != kInlier) throw MetricError("auroc: labels must be 0 or 1");
    n_pos += l == kAnomaly;
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auroc is undefined unless both classes are present");
  for (double s : scores) {
    if (std::isnan(s)) throw MetricError("auroc: NaN score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positive class.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == kAnomaly) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

Summary summary(std::span<const double> values) {
  if (values.empty()) throw ParameterError("summary of an empty set");
  Summary s;
  s.count = values.size();
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return s;
}

ScoreReport ScoreReport::make(std::vector<double> scores, std::vector<int> labels, std::string model,
                              ArchitectureType type, std::uint64_t seed) {
  ScoreReport r;
  r.auroc = bae::auroc(scores, labels);
  r.scores = std::move(scores);
  r.labels = std::move(labels);
  r.model = std::move(model);
  r.arch_type = type;
  r.seed = seed;
  return r;
}

void ResultTable::add(const std::string& dataset, const std::string& method, ArchitectureType type, double value) {
  runs_[CellKey{dataset, method, type}].push_back(value);
}

void ResultTable::set_mean(const std::string& dataset, const std::string& method, ArchitectureType type,
                           double mean) {
  runs_[CellKey{dataset, method, type}] = {mean};
}

Summary ResultTable::cell(const CellKey& key) const {
  const auto it = runs_.find(key);
  if (it == runs_.end()) throw MetricError("result table has no cell for " + key.dataset + "/" + key.method);
  return summary(it->second);
}

std::map<ArchitectureType, double> ate(const ResultTable& table) {
  std::map<ArchitectureType, std::vector<double>> effects;
  for (const auto& [key, values] : table.runs()) {
    if (key.arch_type == ArchitectureType::A) continue;
    const CellKey base{key.dataset, key.method, ArchitectureType::A};
    if (!table.contains(base)) {
      throw MetricError("missing type-A baseline for " + key.dataset + "/" + key.method);
    }
    effects[key.arch_type].push_back(summary(values).mean - table.cell(base).mean);
  }
  std::map<ArchitectureType, double> out;
  for (const auto& [type, diffs] : effects) out[type] = summary(diffs).mean;
  return out;
}

ScoreGrid score_grid(const Scorer& scorer, std::span<const AxisBounds> bounds, std::size_t resolution,
                     bool log_transform) {
  if (bounds.empty() || bounds.size() > 2) throw ParameterError("score grid supports 1-D or 2-D bounds");
  if (resolution < 2) throw ParameterError("grid resolution must be at least 2");
  for (const AxisBounds& b : bounds) {
    if (!(b.hi > b.lo) || !std::isfinite(b.lo) || !std::isfinite(b.hi)) {
      throw ParameterError("degenerate grid bounds");
    }
  }
  ScoreGrid g;
  g.bounds.assign(bounds.begin(), bounds.end());
  g.resolution = resolution;
  g.log_scale = log_transform;
  const auto dims = static_cast<Eigen::Index>(bounds.size());
  const auto axis = [&](std::size_t d, std::size_t i) {
    return bounds[d].lo + (bounds[d].hi - bounds[d].lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
  };
  const std::size_t count = dims == 1 ? resolution : resolution * resolution;
  g.points.resize(static_cast<Eigen::Index>(count), dims);
  for (std::size_t p = 0; p < count; ++p) {
    if (dims == 1) {
      g.points(static_cast<Eigen::Index>(p), 0) = axis(0, p);
    } else {
      g.points(static_cast<Eigen::Index>(p), 0) = axis(0, p / resolution);
      g.points(static_cast<Eigen::Index>(p), 1) = axis(1, p % resolution);
    }
  }
  g.scores = scorer(g.points);
  if (g.scores.size() != g.points.rows()) throw ShapeError("scorer returned the wrong number of scores");
  if (log_transform) g.scores = (g.scores.array() + kLogGridOffset).log().matrix();
  return g;
}

void write_grid_csv(const ScoreGrid& grid, std::ostream& out) {
  out << (grid.points.cols() == 1 ? "x,score\n" : "x,y,score\n");
  out << std::setprecision(17);
  for (Eigen::Index p = 0; p < grid.points.rows(); ++p) {
    for (Eigen::Index d = 0; d < grid.points.cols(); ++d) out << grid.points(p, d) << ',';
    out << grid.scores(p) << '\n';
  }
}

}  // namespace bae
