#include "bae/nngp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "bae/autoencoder.hpp"
#include "bae/error.hpp"

namespace bae {

bool NngpActivation::has_closed_form() const {
  switch (kind) {
    case NngpActivationKind::Identity:
    case NngpActivationKind::ReLU:
    case NngpActivationKind::LeakyReLU:
    case NngpActivationKind::Erf: return true;
    case NngpActivationKind::GELU:
    case NngpActivationKind::SELU: return false;
  }
  return false;
}

double NngpActivation::operator()(double x) const {
  switch (kind) {
    case NngpActivationKind::Identity: return x;
    case NngpActivationKind::ReLU: return x > 0.0 ? x : 0.0;
    case NngpActivationKind::LeakyReLU: return x > 0.0 ? x : alpha * x;
    case NngpActivationKind::Erf: return std::erf(x);
    case NngpActivationKind::GELU: return activate(ActivationKind::GELU, x);
    case NngpActivationKind::SELU: return activate(ActivationKind::SELU, x);
  }
  return x;
}

std::string to_string(const NngpActivation& a) {
  switch (a.kind) {
    case NngpActivationKind::Identity: return "identity";
    case NngpActivationKind::ReLU: return "relu";
    case NngpActivationKind::LeakyReLU: {
      std::ostringstream os;
      os << "leaky_relu(" << a.alpha << ")";
      return os.str();
    }
    case NngpActivationKind::Erf: return "erf";
    case NngpActivationKind::GELU: return "gelu";
    case NngpActivationKind::SELU: return "selu";
  }
  return "unknown";
}

NngpActivationKind parse_nngp_activation(std::string_view name) {
  if (name == "identity") return NngpActivationKind::Identity;
  if (name == "relu") return NngpActivationKind::ReLU;
  if (name == "leaky_relu") return NngpActivationKind::LeakyReLU;
  if (name == "erf") return NngpActivationKind::Erf;
  if (name == "gelu") return NngpActivationKind::GELU;
  if (name == "selu") return NngpActivationKind::SELU;
  throw ParameterError("unknown NNGP activation '" + std::string(name) + "'");
}

double default_weight_variance(const NngpActivation& a) {
  switch (a.kind) {
    case NngpActivationKind::LeakyReLU: return 2.0 / (1.0 + a.alpha * a.alpha);
    case NngpActivationKind::ReLU: return 2.0;
    default: return 1.0;
  }
}

void NNGPConfig::validate() const {
  if (depth == 0) throw ParameterError("NNGP depth must be at least 1");
  if (!(weight_variance > 0.0)) throw ParameterError("weight variance must be positive");
  if (bias_variance < 0.0) throw ParameterError("bias variance must be nonnegative");
  if (!(jitter > 0.0)) throw ParameterError("jitter must be positive");
  if (!activation.has_closed_form() && activation.mc_samples == 0) {
    throw ParameterError("Monte-Carlo activation needs a positive sample count");
  }
}

double base_kernel(std::span<const double> x, std::span<const double> y, const NNGPConfig& config) {
  if (x.size() != y.size()) throw ShapeError("base_kernel: dimension mismatch");
  if (x.empty()) throw ShapeError("base_kernel: empty input");
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  return config.weight_variance * dot / static_cast<double>(x.size()) + config.bias_variance;
}

namespace {

constexpr double kCorrelationSlack = 1e-12;

// Returns the clamped correlation; throws beyond the slack.
double correlation(double k11, double k12, double k22) {
  if (k11 < 0.0 || k22 < 0.0) throw DomainError("activation expectation: negative variance");
  const double s = std::sqrt(k11 * k22);
  if (s == 0.0) {
    if (std::abs(k12) > kCorrelationSlack) throw DomainError("activation expectation: covariance with zero variance");
    return 0.0;
  }
  const double rho = k12 / s;
  if (std::abs(rho) > 1.0 + kCorrelationSlack) throw DomainError("activation expectation: |correlation| > 1");
  return std::clamp(rho, -1.0, 1.0);
}

double relu_expectation(double k11, double k12, double k22) {
  const double rho = correlation(k11, k12, k22);
  const double s = std::sqrt(k11 * k22);
  if (s == 0.0) return 0.0;
  const double theta = std::acos(rho);
  return s / (2.0 * std::numbers::pi) * (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta));
}

// Fixed standard-normal pairs shared by every entry of one kernel evaluation,
// which keeps Monte-Carlo kernels deterministic and exactly symmetric.
class ExpectationRule {
 public:
  explicit ExpectationRule(const NNGPConfig& config) : activation_(config.activation) {
    if (!activation_.has_closed_form()) {
      RngStream rng(config.mc_seed, 0);
      z1_.resize(static_cast<Eigen::Index>(activation_.mc_samples));
      z2_.resize(z1_.size());
      for (Eigen::Index i = 0; i < z1_.size(); ++i) {
        z1_(i) = rng.normal();
        z2_(i) = rng.normal();
      }
    }
  }

  double operator()(double k11, double k12, double k22) const {
    if (activation_.has_closed_form()) return activation_expectation(activation_, k11, k12, k22);
    const double rho = correlation(k11, k12, k22);
    const double a = std::sqrt(k11);
    const double b = std::sqrt(k22);
    const double c = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    double sum = 0.0;
    for (Eigen::Index i = 0; i < z1_.size(); ++i) {
      sum += activation_(a * z1_(i)) * activation_(b * (rho * z1_(i) + c * z2_(i)));
    }
    return sum / static_cast<double>(z1_.size());
  }

 private:
  NngpActivation activation_;
  Vector z1_, z2_;
};

Vector base_diagonal(const Matrix& x, const NNGPConfig& c) {
  return (c.weight_variance * x.rowwise().squaredNorm() / static_cast<double>(x.cols())).array() + c.bias_variance;
}

}  // namespace

double activation_expectation(const NngpActivation& a, double k11, double k12, double k22) {
  switch (a.kind) {
    case NngpActivationKind::Identity:
      correlation(k11, k12, k22);
      return k12;
    case NngpActivationKind::ReLU: return relu_expectation(k11, k12, k22);
    case NngpActivationKind::LeakyReLU: {
      // phi(u) = alpha u + (1 - alpha) relu(u); Stein's lemma gives the cross
      // terms E[u relu(v)] = k12 / 2.
      const double al = a.alpha;
      return al * al * k12 + al * (1.0 - al) * k12 + (1.0 - al) * (1.0 - al) * relu_expectation(k11, k12, k22);
    }
    case NngpActivationKind::Erf: {
      correlation(k11, k12, k22);
      return 2.0 / std::numbers::pi * std::asin(2.0 * k12 / std::sqrt((1.0 + 2.0 * k11) * (1.0 + 2.0 * k22)));
    }
    case NngpActivationKind::GELU:
    case NngpActivationKind::SELU:
      throw ParameterError("no closed-form expectation for " + to_string(a) + "; use the Monte-Carlo path");
  }
  throw ParameterError("unknown NNGP activation");
}

McEstimate mc_activation_expectation(const NngpActivation& a, double k11, double k12, double k22,
                                     std::size_t n_samples, RngStream& rng) {
  if (n_samples < 2) throw ParameterError("Monte-Carlo expectation needs at least 2 samples");
  if (k11 < 0.0 || k22 < 0.0 || k12 * k12 > k11 * k22 * (1.0 + 1e-12)) {
    throw DomainError("Monte-Carlo expectation: covariance is not positive semidefinite");
  }
  const double l11 = std::sqrt(k11);
  const double l21 = l11 > 0.0 ? k12 / l11 : 0.0;
  const double l22 = std::sqrt(std::max(0.0, k22 - l21 * l21));
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double v = a(l11 * z1) * a(l21 * z1 + l22 * z2);
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / static_cast<double>(n_samples - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_samples))};
}

std::vector<Matrix> kernel_trajectory(const Matrix& x, const NNGPConfig& config) {
  config.validate();
  if (x.rows() == 0 || x.cols() == 0) throw ShapeError("kernel_matrix: empty input");
  const ExpectationRule expect(config);
  std::vector<Matrix> out;
  Matrix k = config.weight_variance * (x * x.transpose()) / static_cast<double>(x.cols());
  k.array() += config.bias_variance;
  out.push_back(k);
  const Eigen::Index n = x.rows();
  for (std::size_t layer = 1; layer < config.depth; ++layer) {
    Matrix next(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i; j < n; ++j) {
        const double v = config.weight_variance * expect(k(i, i), k(i, j), k(j, j)) + config.bias_variance;
        next(i, j) = v;
        next(j, i) = v;
      }
    }
    k = std::move(next);
    out.push_back(k);
  }
  return out;
}

KernelMatrix kernel_matrix(const Matrix& x, const NNGPConfig& config) {
  return {kernel_trajectory(x, config).back(), config};
}

Vector kernel_diagonal(const Matrix& x, const NNGPConfig& config) {
  config.validate();
  const ExpectationRule expect(config);
  Vector d = base_diagonal(x, config);
  for (std::size_t layer = 1; layer < config.depth; ++layer) {
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      d(i) = config.weight_variance * expect(d(i), d(i), d(i)) + config.bias_variance;
    }
  }
  return d;
}

KernelMatrix kernel_matrix(const Matrix& x, const Matrix& y, const NNGPConfig& config) {
  config.validate();
  if (x.cols() != y.cols()) throw ShapeError("kernel_matrix: feature dimensions differ");
  if (x.cols() == 0) throw ShapeError("kernel_matrix: empty input");
  const ExpectationRule expect(config);
  Matrix k = config.weight_variance * (x * y.transpose()) / static_cast<double>(x.cols());
  k.array() += config.bias_variance;
  Vector dx = base_diagonal(x, config);
  Vector dy = base_diagonal(y, config);
  for (std::size_t layer = 1; layer < config.depth; ++layer) {
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      for (Eigen::Index j = 0; j < k.cols(); ++j) {
        k(i, j) = config.weight_variance * expect(dx(i), k(i, j), dy(j)) + config.bias_variance;
      }
    }
    for (Eigen::Index i = 0; i < dx.size(); ++i) dx(i) = config.weight_variance * expect(dx(i), dx(i), dx(i)) + config.bias_variance;
    for (Eigen::Index j = 0; j < dy.size(); ++j) dy(j) = config.weight_variance * expect(dy(j), dy(j), dy(j)) + config.bias_variance;
  }
  return {std::move(k), config};
}

namespace {

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

Factorization factorize(const Matrix& k_tt, double jitter) {
  if (k_tt.rows() != k_tt.cols()) throw ShapeError("training kernel must be square");
  if (k_tt.rows() == 0) throw ParameterError("GP posterior needs at least one training point");
  if (!(jitter > 0.0)) throw ParameterError("jitter must be positive");
  const Eigen::MatrixXd base = k_tt;
  double j = jitter;
  for (int attempt = 0; attempt <= 3; ++attempt, j *= 10.0) {
    Eigen::MatrixXd a = base;
    a.diagonal().array() += j;
    Factorization f{Eigen::LLT<Eigen::MatrixXd>(a), j};
    if (f.llt.info() == Eigen::Success) return f;
  }
  throw ConditioningError("Cholesky factorization failed after escalating jitter to " + std::to_string(j / 10.0));
}

}  // namespace

GpPosterior gp_posterior_reconstruct(const Matrix& k_tt, const Matrix& k_st, const Vector& k_ss_diag,
                                     const Matrix& targets, double jitter) {
  if (k_st.cols() != k_tt.rows() || targets.rows() != k_tt.rows() || k_ss_diag.size() != k_st.rows()) {
    throw ShapeError("gp_posterior_reconstruct: inconsistent kernel/target shapes");
  }
  const Factorization f = factorize(k_tt, jitter);
  GpPosterior post;
  post.jitter_used = f.jitter;
  const Eigen::MatrixXd alpha = f.llt.solve(Eigen::MatrixXd(targets));
  post.mean = k_st * alpha;
  const Eigen::MatrixXd v = f.llt.matrixL().solve(Eigen::MatrixXd(k_st.transpose()));
  post.variance = k_ss_diag - v.colwise().squaredNorm().transpose();
  return post;
}

InfiniteAutoencoder::InfiniteAutoencoder(Matrix train_x, NNGPConfig config)
    : train_x_(std::move(train_x)), config_(config) {
  config_.validate();
  if (train_x_.rows() == 0) throw ParameterError("infinite autoencoder needs at least one training point");
  const KernelMatrix k = kernel_matrix(train_x_, config_);
  Factorization f = factorize(k.entries, config_.jitter);
  jitter_used_ = f.jitter;
  const Eigen::MatrixXd targets = train_x_.unaryExpr([](double v) {
    const double p = std::clamp(v, kTargetClamp, 1.0 - kTargetClamp);
    return std::log(p / (1.0 - p));
  });
  weights_ = f.llt.solve(targets);
  factor_ = std::move(f.llt);
}

Matrix InfiniteAutoencoder::reconstruct(const Matrix& x) const {
  if (x.cols() != train_x_.cols()) {
    throw ShapeError("infinite autoencoder expects D=" + std::to_string(train_x_.cols()) + ", got D=" +
                     std::to_string(x.cols()));
  }
  const KernelMatrix k_st = kernel_matrix(x, train_x_, config_);
  const Matrix mean = k_st.entries * weights_;
  return activation_apply(ActivationKind::Sigmoid, mean);
}

Vector InfiniteAutoencoder::score(const Matrix& x) const { return nll_gaussian(x, reconstruct(x)); }

Vector infbae_score(const Matrix& x_star, const Matrix& train_x, const NNGPConfig& config) {
  return InfiniteAutoencoder(train_x, config).score(x_star);
}

void write_kernel_text(const KernelMatrix& kernel, std::ostream& out) {
  out << "# nngp-kernel rows=" << kernel.entries.rows() << " cols=" << kernel.entries.cols()
      << " depth=" << kernel.provenance.depth << " activation=" << to_string(kernel.provenance.activation)
      << " weight_variance=" << std::setprecision(17) << kernel.provenance.weight_variance
      << " bias_variance=" << kernel.provenance.bias_variance << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < kernel.entries.rows(); ++i) {
    for (Eigen::Index j = 0; j < kernel.entries.cols(); ++j) {
      if (j) out << ' ';
      out << kernel.entries(i, j);
    }
    out << '\n';
  }
}

KernelMatrix read_kernel_text(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("# nngp-kernel", 0) != 0) {
    throw ParseError("kernel file: missing '# nngp-kernel' header");
  }
  KernelMatrix k;
  long rows = -1, cols = -1;
  std::istringstream hs(header.substr(13));
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "rows") rows = std::stol(value);
    else if (key == "cols") cols = std::stol(value);
    else if (key == "depth") k.provenance.depth = std::stoul(value);
    else if (key == "weight_variance") k.provenance.weight_variance = std::stod(value);
    else if (key == "bias_variance") k.provenance.bias_variance = std::stod(value);
    else if (key == "activation") {
      const auto paren = value.find('(');
      k.provenance.activation.kind = parse_nngp_activation(value.substr(0, paren));
      if (paren != std::string::npos) k.provenance.activation.alpha = std::stod(value.substr(paren + 1));
    }
  }
  if (rows < 0 || cols < 0) throw ParseError("kernel file: header lacks rows/cols");
  k.entries.resize(rows, cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) {
      if (!(in >> k.entries(i, j))) throw ParseError("kernel file: truncated at row " + std::to_string(i));
    }
  }
  return k;
}

}  // namespace bae
