#include "bae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "bae/error.hpp"

namespace bae {

std::string_view to_string(ToyKind kind) {
  switch (kind) {
    case ToyKind::Blobs: return "blobs";
    case ToyKind::TwoMoons: return "two_moons";
    case ToyKind::Ring: return "ring";
    case ToyKind::Spiral: return "spiral";
    case ToyKind::Bimodal1d: return "bimodal_1d";
    case ToyKind::Trimodal1d: return "trimodal_1d";
  }
  return "unknown";
}

ToyKind parse_toy_kind(std::string_view name) {
  for (ToyKind k : {ToyKind::Blobs, ToyKind::TwoMoons, ToyKind::Ring, ToyKind::Spiral, ToyKind::Bimodal1d,
                    ToyKind::Trimodal1d}) {
    if (name == to_string(k)) return k;
  }
  throw ParameterError("unknown toy dataset '" + std::string(name) + "'");
}

namespace {

double truncated_normal(RngStream& rng, double sd) {
  if (sd == 0.0) return 0.0;
  for (;;) {
    const double z = rng.normal();
    if (std::abs(z) <= 3.0) return sd * z;
  }
}

}  // namespace

Dataset gen_toy(ToyKind kind, std::size_t n, double noise, RngStream& rng) {
  if (n == 0) throw ParameterError("toy dataset size must be at least 1");
  if (noise < 0.0) throw ParameterError("noise must be nonnegative");
  constexpr double pi = std::numbers::pi;
  Dataset d;
  d.name = std::string(to_string(kind));
  const auto rows = static_cast<Eigen::Index>(n);
  switch (kind) {
    case ToyKind::Blobs: {
      constexpr double centers[3][2] = {{0.0, 0.0}, {4.0, 0.0}, {2.0, 3.5}};
      d.x.resize(rows, 2);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& c = centers[i % 3];
        d.x(i, 0) = c[0] + noise * rng.normal();
        d.x(i, 1) = c[1] + noise * rng.normal();
      }
      break;
    }
    case ToyKind::TwoMoons: {
      d.x.resize(rows, 2);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double t = pi * rng.uniform();
        if (i % 2 == 0) {
          d.x(i, 0) = std::cos(t);
          d.x(i, 1) = std::sin(t);
        } else {
          d.x(i, 0) = 1.0 - std::cos(t);
          d.x(i, 1) = 0.5 - std::sin(t);
        }
        d.x(i, 0) += noise * rng.normal();
        d.x(i, 1) += noise * rng.normal();
      }
      break;
    }
    case ToyKind::Ring: {
      d.x.resize(rows, 2);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double t = 2.0 * pi * rng.uniform();
        const double r = kRingRadius + truncated_normal(rng, noise);
        d.x(i, 0) = kRingCenterX + r * std::cos(t);
        d.x(i, 1) = kRingCenterY + r * std::sin(t);
      }
      break;
    }
    case ToyKind::Spiral: {
      d.x.resize(rows, 2);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double t = 0.5 + 3.0 * pi * rng.uniform();
        const double r = t / (3.0 * pi);
        const double phase = (i % 2 == 0) ? 0.0 : pi;
        d.x(i, 0) = r * std::cos(t + phase) + noise * rng.normal();
        d.x(i, 1) = r * std::sin(t + phase) + noise * rng.normal();
      }
      break;
    }
    case ToyKind::Bimodal1d:
    case ToyKind::Trimodal1d: {
      static constexpr double bi[] = {-2.0, 2.0};
      static constexpr double tri[] = {-3.0, 0.0, 3.0};
      const std::span<const double> modes = kind == ToyKind::Bimodal1d ? std::span<const double>(bi)
                                                                       : std::span<const double>(tri);
      d.x.resize(rows, 1);
      for (Eigen::Index i = 0; i < rows; ++i) {
        d.x(i, 0) = modes[static_cast<std::size_t>(i) % modes.size()] + noise * rng.normal();
      }
      break;
    }
  }
  return d;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

Dataset parse_csv(std::string_view text, const std::optional<std::string>& label_column, std::string name) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw ParseError(name + ": missing header row");

  std::vector<std::string_view> header = split_commas(lines[first]);
  if (!header.empty() && header.front().starts_with("\xEF\xBB\xBF")) header.front().remove_prefix(3);
  std::optional<std::size_t> label_index;
  if (label_column) {
    const auto it = std::find(header.begin(), header.end(), std::string_view(*label_column));
    if (it == header.end()) throw ConfigError(name + ": label column '" + *label_column + "' not found");
    label_index = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (std::size_t li = first + 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    const auto cells = split_commas(lines[li]);
    if (cells.size() != header.size()) {
      throw ParseError(name + ": line " + std::to_string(li + 1) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
      if (ec != std::errc() || ptr != cells[c].data() + cells[c].size() || cells[c].empty() || !std::isfinite(v)) {
        throw ParseError(name + ": non-numeric cell '" + std::string(cells[c]) + "' at row " +
                         std::to_string(rows.size() + 1) + ", column " + std::to_string(c + 1) + " (" +
                         std::string(header[c]) + ")");
      }
      if (label_index && c == *label_index) {
        if (v != 0.0 && v != 1.0) {
          throw ParseError(name + ": label at row " + std::to_string(rows.size() + 1) + " must be 0 or 1");
        }
        labels.push_back(static_cast<int>(v));
      } else {
        row.push_back(v);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(name + ": no data rows");

  Dataset d;
  d.name = std::move(name);
  const std::size_t cols = header.size() - (label_index ? 1 : 0);
  if (cols == 0) throw ParseError(d.name + ": no feature columns");
  d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) d.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  if (label_index) d.labels = std::move(labels);
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const std::optional<std::string>& label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), label_column, path.string());
}

void write_csv(const Dataset& data, const std::filesystem::path& path, const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < data.dim(); ++c) {
    if (c) out << ',';
    out << (c < header.size() ? header[c] : "x" + std::to_string(c));
  }
  if (data.labels) out << ",label";
  out << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t c = 0; c < data.dim(); ++c) {
      if (c) out << ',';
      out << data.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    if (data.labels) out << ',' << (*data.labels)[r];
    out << '\n';
  }
}

Dataset select_label(const Dataset& data, int label) {
  if (!data.labels) throw ConfigError(data.name + ": dataset has no labels");
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if ((*data.labels)[i] == label) keep.push_back(static_cast<Eigen::Index>(i));
  }
  Dataset out;
  out.name = data.name;
  out.x.resize(static_cast<Eigen::Index>(keep.size()), data.x.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(keep[i]);
  out.labels = std::vector<int>(keep.size(), label);
  return out;
}

SplitDataset split_70_30(const Dataset& inliers, const Dataset& anomalies, std::uint64_t seed) {
  if (inliers.size() == 0) throw ParameterError("split needs at least one inlier");
  if (anomalies.size() > 0 && anomalies.dim() != inliers.dim()) {
    throw ShapeError("inliers and anomalies have different feature counts");
  }
  std::vector<Eigen::Index> order(inliers.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  RngStream rng(seed, 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_train = inliers.size() * 7 / 10;
  const std::size_t n_test_in = inliers.size() - n_train;

  SplitDataset s;
  s.train.name = inliers.name + "/train";
  s.train.x.resize(static_cast<Eigen::Index>(n_train), inliers.x.cols());
  for (std::size_t i = 0; i < n_train; ++i) s.train.x.row(static_cast<Eigen::Index>(i)) = inliers.x.row(order[i]);
  s.train.labels = std::vector<int>(n_train, kInlier);

  s.test.name = inliers.name + "/test";
  s.test.x.resize(static_cast<Eigen::Index>(n_test_in + anomalies.size()), inliers.x.cols());
  std::vector<int> labels;
  for (std::size_t i = 0; i < n_test_in; ++i) {
    s.test.x.row(static_cast<Eigen::Index>(i)) = inliers.x.row(order[n_train + i]);
    labels.push_back(kInlier);
  }
  for (std::size_t i = 0; i < anomalies.size(); ++i) {
    s.test.x.row(static_cast<Eigen::Index>(n_test_in + i)) = anomalies.x.row(static_cast<Eigen::Index>(i));
    labels.push_back(kAnomaly);
  }
  s.test.labels = std::move(labels);
  return s;
}

MinMaxScaler::MinMaxScaler(Vector min, Vector max) : min_(std::move(min)), max_(std::move(max)), fitted_(true) {
  if (min_.size() != max_.size()) throw ShapeError("scaler min/max lengths differ");
  if ((max_.array() < min_.array()).any()) throw ParameterError("scaler max must be >= min");
}

MinMaxScaler MinMaxScaler::fit(const Matrix& train) {
  if (train.rows() == 0) throw ParameterError("cannot fit a scaler on an empty matrix");
  return MinMaxScaler(train.colwise().minCoeff().transpose(), train.colwise().maxCoeff().transpose());
}

Matrix MinMaxScaler::transform(const Matrix& x) const {
  if (!fitted_) throw ParameterError("scaler used before fit");
  if (x.cols() != min_.size()) {
    throw ShapeError("scaler fitted on " + std::to_string(min_.size()) + " features, got " + std::to_string(x.cols()));
  }
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double range = max_(c) - min_(c);
    if (range > 0.0) {
      out.col(c) = (x.col(c).array() - min_(c)) / range;
    } else {
      out.col(c).setZero();
    }
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ParameterError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<int> tukey_fences_label(std::span<const double> deviations, double k) {
  if (deviations.empty()) throw ParameterError("Tukey fences need at least one value");
  std::vector<double> v(deviations.begin(), deviations.end());
  const double q1 = quantile(v, 0.25);
  const double q3 = quantile(v, 0.75);
  const double fence = q3 + k * (q3 - q1);
  std::vector<int> labels(deviations.size());
  for (std::size_t i = 0; i < deviations.size(); ++i) labels[i] = deviations[i] > fence ? kAnomaly : kInlier;
  return labels;
}

Matrix downsample(const Matrix& series, std::size_t factor) {
  if (factor == 0) throw ParameterError("downsample factor must be at least 1");
  const auto n = static_cast<std::size_t>(series.rows());
  const std::size_t out_rows = (n + factor - 1) / factor;
  Matrix out(static_cast<Eigen::Index>(out_rows), series.cols());
  for (std::size_t i = 0; i < out_rows; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = series.row(static_cast<Eigen::Index>(i * factor));
  }
  return out;
}

Matrix segment(const Matrix& series, std::size_t start, std::size_t end) {
  const auto n = static_cast<std::size_t>(series.rows());
  if (!(start < end && end <= n)) {
    throw ParameterError("segment [" + std::to_string(start) + ", " + std::to_string(end) +
                         ") out of range for " + std::to_string(n) + " rows");
  }
  return series.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start));
}

}  // namespace bae
