#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "bae/data.hpp"
#include "bae/error.hpp"
#include "bae/nngp.hpp"
#include "oracles.hpp"

using namespace bae;
using bae::testing::random_matrix;

namespace {

NngpActivation act(NngpActivationKind k, double alpha = 0.01) {
  NngpActivation a;
  a.kind = k;
  a.alpha = alpha;
  return a;
}

NNGPConfig config(NngpActivationKind k, std::size_t depth = 7, double bias = 0.0) {
  NNGPConfig c;
  c.activation = act(k);
  c.depth = depth;
  c.weight_variance = default_weight_variance(c.activation);
  c.bias_variance = bias;
  return c;
}

// Random 2x2 PSD matrix as (k11, k12, k22).
std::array<double, 3> random_psd(RngStream& rng) {
  const double a = rng.normal(), b = rng.normal(), c = rng.normal(), d = rng.normal();
  return {a * a + b * b, a * c + b * d, c * c + d * d};
}

}  // namespace

TEST(BaseKernel, Examples) {
  NNGPConfig c = config(NngpActivationKind::ReLU);
  c.weight_variance = 1.0;
  const std::vector<double> ones{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(base_kernel(ones, ones, c), 1.0);
  const std::vector<double> e1{1, 0}, e2{0, 1};
  EXPECT_DOUBLE_EQ(base_kernel(e1, e2, c), 0.0);
  c.bias_variance = 0.5;
  const std::vector<double> zero{0, 0, 0};
  EXPECT_DOUBLE_EQ(base_kernel(zero, zero, c), 0.5);
  EXPECT_THROW(base_kernel(e1, ones, c), ShapeError);
}

TEST(ActivationExpectation, ReluExamples) {
  const NngpActivation relu = act(NngpActivationKind::ReLU);
  EXPECT_NEAR(activation_expectation(relu, 1, 1, 1), 0.5, 1e-15);
  EXPECT_NEAR(activation_expectation(relu, 1, 0, 1), 1.0 / (2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(activation_expectation(relu, 1, -1, 1), 0.0, 1e-15);
}

TEST(ActivationExpectation, SimpleForms) {
  EXPECT_NEAR(activation_expectation(act(NngpActivationKind::Erf), 1.3, 0.0, 0.7), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(activation_expectation(act(NngpActivationKind::Identity), 2.0, 0.3, 1.0), 0.3);
  EXPECT_NEAR(activation_expectation(act(NngpActivationKind::LeakyReLU), 1, 0, 1),
              0.99 * 0.99 / (2.0 * std::numbers::pi), 1e-15);
}

TEST(ActivationExpectation, LeakyMatchesMonteCarlo) {
  const NngpActivation leaky = act(NngpActivationKind::LeakyReLU);
  RngStream rng(11, 0);
  const McEstimate mc = mc_activation_expectation(leaky, 1, 0, 1, 1000000, rng);
  EXPECT_LE(std::abs(mc.mean - 0.155990), 3.0 * mc.standard_error + 1e-6);
  EXPECT_LE(std::abs(mc.mean - activation_expectation(leaky, 1, 0, 1)), 3.0 * mc.standard_error);
}

TEST(ActivationExpectation, ClosedFormsAgreeWithMonteCarloSweep) {
  RngStream inputs(12, 0);
  RngStream draws(12, 1);
  for (NngpActivationKind k : {NngpActivationKind::ReLU, NngpActivationKind::LeakyReLU, NngpActivationKind::Erf}) {
    const NngpActivation a = act(k, 0.2);
    for (int i = 0; i < 25; ++i) {
      const auto [k11, k12, k22] = random_psd(inputs);
      const McEstimate mc = mc_activation_expectation(a, k11, k12, k22, 100000, draws);
      // 4 SE keeps the family-wise false alarm rate small over 75 checks.
      EXPECT_LE(std::abs(mc.mean - activation_expectation(a, k11, k12, k22)), 4.0 * mc.standard_error)
          << to_string(a) << ' ' << k11 << ' ' << k12 << ' ' << k22;
    }
  }
}

TEST(ActivationExpectation, SymmetricAndMonotone) {
  for (NngpActivationKind k : {NngpActivationKind::ReLU, NngpActivationKind::LeakyReLU, NngpActivationKind::Erf}) {
    const NngpActivation a = act(k);
    EXPECT_NEAR(activation_expectation(a, 2.0, 0.5, 0.7), activation_expectation(a, 0.7, 0.5, 2.0), 1e-15);
    double previous = -INFINITY;
    for (int i = -20; i <= 20; ++i) {
      const double k12 = 1.5 * i / 20.0;
      const double v = activation_expectation(a, 1.5, k12, 1.5);
      EXPECT_GE(v, previous - 1e-15);
      previous = v;
    }
    EXPECT_GE(activation_expectation(a, 0.8, 0.8, 0.8), 0.0);
  }
}

TEST(ActivationExpectation, DomainErrors) {
  const NngpActivation relu = act(NngpActivationKind::ReLU);
  EXPECT_THROW(activation_expectation(relu, 1, 1.1, 1), DomainError);
  EXPECT_THROW(activation_expectation(relu, -1, 0, 1), DomainError);
  EXPECT_NO_THROW(activation_expectation(relu, 1, 1.0 + 1e-13, 1));
  EXPECT_THROW(activation_expectation(act(NngpActivationKind::GELU), 1, 0, 1), ParameterError);
}

TEST(McExpectation, IdentityAndErrors) {
  RngStream rng(13, 0);
  const McEstimate e = mc_activation_expectation(act(NngpActivationKind::Identity), 1.0, 0.4, 2.0, 200000, rng);
  EXPECT_LE(std::abs(e.mean - 0.4), 3.0 * e.standard_error);
  EXPECT_THROW(mc_activation_expectation(act(NngpActivationKind::ReLU), 1, 0, 1, 0, rng), ParameterError);
  EXPECT_THROW(mc_activation_expectation(act(NngpActivationKind::ReLU), 1, 2, 1, 100, rng), DomainError);
}

TEST(KernelMatrix, SymmetricPsdAndPositiveDiagonal) {
  RngStream rng(14, 0);
  const Matrix x = random_matrix(12, 3, rng, 0, 1);
  for (NngpActivationKind k : {NngpActivationKind::ReLU, NngpActivationKind::LeakyReLU, NngpActivationKind::Erf,
                               NngpActivationKind::GELU}) {
    NNGPConfig c = config(k, 7, 0.1);
    c.activation.mc_samples = 20000;
    const KernelMatrix km = kernel_matrix(x, c);
    EXPECT_LE((km.entries - km.entries.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE((km.entries.diagonal().array() >= 0.0).all());
    // Monte-Carlo entries are only PSD up to sampling error, so that path may
    // use the escalated jitter.
    const double jitter = c.activation.has_closed_form() ? c.jitter : c.jitter * 1e3;
    Eigen::MatrixXd jittered = km.entries;
    jittered.diagonal().array() += jitter;
    EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(jittered).info(), Eigen::Success) << to_string(c.activation);
  }
}

TEST(KernelMatrix, SinglePointAndDepthOne) {
  Matrix one(1, 2);
  one << 0.3, 0.9;
  EXPECT_GT(kernel_matrix(one, config(NngpActivationKind::LeakyReLU)).entries(0, 0), 0.0);

  RngStream rng(15, 0);
  const Matrix x = random_matrix(4, 3, rng);
  NNGPConfig c = config(NngpActivationKind::Identity, 1, 0.2);
  c.weight_variance = 1.7;
  const Matrix k = kernel_matrix(x, c).entries;
  const Matrix expected = (1.7 * x * x.transpose() / 3.0).array() + 0.2;
  EXPECT_LE((k - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KernelMatrix, CrossKernelMatchesJointKernel) {
  RngStream rng(16, 0);
  const Matrix x = random_matrix(5, 2, rng);
  const Matrix y = random_matrix(3, 2, rng);
  Matrix xy(8, 2);
  xy << x, y;
  const NNGPConfig c = config(NngpActivationKind::ReLU, 4, 0.05);
  const Matrix joint = kernel_matrix(xy, c).entries;
  EXPECT_LE((kernel_matrix(x, y, c).entries - joint.topRightCorner(5, 3)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LE((kernel_diagonal(x, c) - joint.diagonal().head(5)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(KernelMatrix, MonteCarloKindsAreDeterministicPerSeed) {
  RngStream rng(17, 0);
  const Matrix x = random_matrix(4, 2, rng);
  NNGPConfig c = config(NngpActivationKind::GELU, 3);
  c.activation.mc_samples = 5000;
  EXPECT_EQ(kernel_matrix(x, c).entries, kernel_matrix(x, c).entries);
  NNGPConfig other = c;
  other.mc_seed = 1;
  EXPECT_NE(kernel_matrix(x, c).entries, kernel_matrix(x, other).entries);
}

TEST(KernelMatrix, CorrelationSpreadShrinksWithDepth) {
  RngStream rng(18, 0);
  const Matrix x = random_matrix(8, 3, rng);
  const auto traj = kernel_trajectory(x, config(NngpActivationKind::ReLU, 12));
  double previous = INFINITY;
  for (const Matrix& k : traj) {
    double lo = INFINITY, hi = -INFINITY;
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < k.cols(); ++j) {
        const double rho = k(i, j) / std::sqrt(k(i, i) * k(j, j));
        lo = std::min(lo, rho);
        hi = std::max(hi, rho);
      }
    }
    EXPECT_LE(hi - lo, previous + 1e-12);
    previous = hi - lo;
  }
}

TEST(KernelMatrix, MatchesWideRandomNetworks) {
  RngStream rng(19, 0);
  const Matrix x = random_matrix(5, 3, rng);
  const NNGPConfig c = config(NngpActivationKind::LeakyReLU, 3);
  const Matrix analytic = kernel_matrix(x, c).entries;
  const Matrix empirical = bae::testing::wide_network_covariance(x, c, 1024, 200, 7);
  EXPECT_LE((analytic - empirical).norm() / analytic.norm(), 0.05);
}

TEST(GpPosterior, InterpolatesSingleTrainingPoint) {
  Matrix ktt(1, 1), targets(1, 2);
  ktt << 0.8;
  targets << 0.3, -1.2;
  const GpPosterior gp = gp_posterior_reconstruct(ktt, ktt, Vector::Constant(1, 0.8), targets, 1e-10);
  EXPECT_LE((gp.mean - targets).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GE(gp.variance(0), -1e-10);
}

TEST(GpPosterior, ZeroCrossKernelGivesPriorMean) {
  Matrix ktt(2, 2);
  ktt << 1.0, 0.2, 0.2, 1.0;
  const GpPosterior gp =
      gp_posterior_reconstruct(ktt, Matrix::Zero(3, 2), Vector::Ones(3), Matrix::Ones(2, 4), 1e-6);
  EXPECT_TRUE(gp.mean.isZero(0.0));
  EXPECT_TRUE(gp.variance.isOnes(1e-15));
}

TEST(GpPosterior, MatchesExplicitTwoByTwoInverse) {
  const double a = 1.3, b = 0.4, d = 0.9, jitter = 1e-6;
  Matrix ktt(2, 2), kst(1, 2), y(2, 1);
  ktt << a, b, b, d;
  kst << 0.7, -0.2;
  y << 0.25, 0.8;
  const double a2 = a + jitter, d2 = d + jitter;
  const double det = a2 * d2 - b * b;
  Matrix inv(2, 2);
  inv << d2 / det, -b / det, -b / det, a2 / det;
  const double mean = (kst * inv * y)(0, 0);
  const double var = 1.1 - (kst * inv * kst.transpose())(0, 0);
  const GpPosterior gp = gp_posterior_reconstruct(ktt, kst, Vector::Constant(1, 1.1), y, jitter);
  EXPECT_NEAR(gp.mean(0, 0), mean, 1e-10);
  EXPECT_NEAR(gp.variance(0), var, 1e-10);
  EXPECT_EQ(gp.jitter_used, jitter);
}

TEST(GpPosterior, JitterEscalationAndFailure) {
  Matrix singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  EXPECT_NO_THROW(gp_posterior_reconstruct(singular, singular, Vector::Ones(2), Matrix::Ones(2, 1), 1e-6));
  Matrix negative = -Matrix::Identity(2, 2);
  EXPECT_THROW(gp_posterior_reconstruct(negative, negative, Vector::Ones(2), Matrix::Ones(2, 1), 1e-6),
               ConditioningError);
  EXPECT_THROW(gp_posterior_reconstruct(Matrix::Identity(2, 2), Matrix::Zero(1, 3), Vector::Ones(1),
                                        Matrix::Ones(2, 1), 1e-6),
               ShapeError);
}

TEST(InfiniteAutoencoder, TrainingPointsScoreLow) {
  RngStream rng(20, 0);
  const Matrix train_x = random_matrix(30, 2, rng, 0.2, 0.8);
  NNGPConfig c = config(NngpActivationKind::LeakyReLU, 7, 0.1);
  c.jitter = 1e-8;
  const InfiniteAutoencoder model(train_x, c);
  const Matrix probes = random_matrix(200, 2, rng, -0.5, 1.5);
  std::vector<double> probe_scores;
  const Vector ps = model.score(probes);
  probe_scores.assign(ps.data(), ps.data() + ps.size());
  const double p10 = quantile(probe_scores, 0.1);
  const Vector train_scores = model.score(train_x);
  EXPECT_LT(train_scores.maxCoeff(), p10);
  EXPECT_TRUE((train_scores.array() >= 0.0).all());
}

TEST(InfiniteAutoencoder, Errors) {
  EXPECT_THROW(InfiniteAutoencoder(Matrix(0, 2), config(NngpActivationKind::ReLU)), ParameterError);
  const InfiniteAutoencoder model(Matrix::Constant(3, 2, 0.5) + Matrix::Identity(3, 2) * 0.1,
                                  config(NngpActivationKind::ReLU, 7, 0.1));
  EXPECT_THROW(model.score(Matrix::Zero(1, 3)), ShapeError);
}

TEST(InfiniteAutoencoder, BimodalOrdering) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    RngStream rng(seed, 0);
    const Dataset d = gen_toy(ToyKind::Bimodal1d, 200, 0.3, rng);
    const MinMaxScaler s = MinMaxScaler::fit(d.x);
    const Matrix train_x = s.transform(d.x);
    const InfiniteAutoencoder model(train_x, config(NngpActivationKind::LeakyReLU, 7, 0.1));
    Matrix probes(4, 1);
    probes << -2.0, 2.0, 0.0, 5.0;
    const Vector score = model.score(s.transform(probes));
    EXPECT_LT(std::max(score(0), score(1)), score(2)) << "seed " << seed;
    EXPECT_LT(std::max(score(0), score(1)), score(3)) << "seed " << seed;
  }
}

TEST(InfbaeScore, FreeFunctionMatchesClass) {
  RngStream rng(21, 0);
  const Matrix x = random_matrix(10, 2, rng, 0, 1);
  const Matrix q = random_matrix(4, 2, rng, 0, 1);
  const NNGPConfig c = config(NngpActivationKind::Erf, 5, 0.1);
  EXPECT_EQ(infbae_score(q, x, c), InfiniteAutoencoder(x, c).score(q));
}

TEST(KernelText, RoundTrip) {
  RngStream rng(22, 0);
  const KernelMatrix k = kernel_matrix(random_matrix(4, 2, rng), config(NngpActivationKind::ReLU, 3, 0.1));
  std::stringstream io;
  write_kernel_text(k, io);
  EXPECT_EQ(io.str().rfind("# nngp-kernel rows=4 cols=4 depth=3", 0), 0u);
  const KernelMatrix back = read_kernel_text(io);
  EXPECT_EQ(back.entries, k.entries);
  EXPECT_EQ(back.provenance.depth, 3u);
  std::stringstream bad("not a kernel\n");
  EXPECT_THROW(read_kernel_text(bad), ParseError);
}

TEST(NngpConfig, Validation) {
  NNGPConfig c;
  c.depth = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = NNGPConfig{};
  c.jitter = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = NNGPConfig{};
  c.bias_variance = -1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  EXPECT_DOUBLE_EQ(default_weight_variance(act(NngpActivationKind::LeakyReLU, 0.01)), 2.0 / (1.0 + 1e-4));
  EXPECT_DOUBLE_EQ(default_weight_variance(act(NngpActivationKind::ReLU)), 2.0);
}
