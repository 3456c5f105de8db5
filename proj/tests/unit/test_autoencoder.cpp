#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "bae/autoencoder.hpp"
#include "bae/error.hpp"
#include "oracles.hpp"

using namespace bae;
using bae::testing::finite_difference;
using bae::testing::random_matrix;
using bae::testing::relative_error;

namespace {

ArchitectureSpec spec(std::size_t d, std::vector<std::size_t> hidden, double factor, bool skip) {
  ArchitectureSpec s;
  s.input_dim = d;
  s.hidden_widths = std::move(hidden);
  s.latent_factor = factor;
  s.skip = skip;
  return s;
}

}  // namespace

TEST(Architecture, ClassifiesTableTypes) {
  EXPECT_EQ(classify_architecture(spec(10, {8}, 0.5, false)), ArchitectureType::A);
  EXPECT_EQ(classify_architecture(spec(10, {8}, 0.5, true)), ArchitectureType::B);
  EXPECT_EQ(classify_architecture(spec(10, {8}, 1.0, false)), ArchitectureType::C);
  EXPECT_EQ(classify_architecture(spec(10, {8}, 2.0, true)), ArchitectureType::D);
}

TEST(Architecture, ClassificationFollowsOvercompletePredicate) {
  for (std::size_t d = 1; d <= 12; ++d) {
    for (double f : {0.1, 0.25, 0.5, 0.95, 1.0, 2.0, 10.0}) {
      for (bool skip : {false, true}) {
        const ArchitectureSpec s = spec(d, {4}, f, skip);
        const ArchitectureType t = classify_architecture(s);
        const bool over = s.latent_dim() >= d;
        EXPECT_EQ(over, t == ArchitectureType::C || t == ArchitectureType::D);
        EXPECT_EQ(skip, t == ArchitectureType::B || t == ArchitectureType::D);
      }
    }
  }
}

TEST(Architecture, LatentDimRounding) {
  EXPECT_EQ(spec(2, {50, 50, 50}, 0.5, false).latent_dim(), 1u);
  EXPECT_EQ(spec(2, {50, 50, 50}, 50.0, false).latent_dim(), 100u);
  EXPECT_EQ(spec(20, {10}, 0.1, false).latent_dim(), 2u);
  EXPECT_EQ(spec(5, {10}, 0.5, false).latent_dim(), 3u);  // 2.5 rounds up
  EXPECT_EQ(spec(3, {10}, 0.1, false).latent_dim(), 1u);  // floor of 1
}

TEST(Architecture, ValidationRejectsBadSpecs) {
  EXPECT_THROW(spec(0, {4}, 1.0, false).validate(), ParameterError);
  EXPECT_THROW(spec(3, {4, 0}, 1.0, false).validate(), ParameterError);
  EXPECT_THROW(spec(3, {4}, 0.0, false).validate(), ParameterError);
  EXPECT_THROW(spec(3, {4}, -1.0, false).validate(), ParameterError);
}

TEST(Autoencoder, DecoderMirrorsEncoder) {
  RngStream rng(1, 0);
  const AutoencoderModel m = build(spec(6, {10, 8}, 0.5, false), rng);
  ASSERT_EQ(m.encoder.size(), 3u);
  ASSERT_EQ(m.decoder.size(), 3u);
  EXPECT_EQ(m.encoder[0].in_dim(), 6u);
  EXPECT_EQ(m.encoder[2].out_dim(), 3u);
  EXPECT_EQ(m.decoder[0].in_dim(), 3u);
  EXPECT_EQ(m.decoder[0].out_dim(), 8u);
  EXPECT_EQ(m.decoder[1].out_dim(), 10u);
  EXPECT_EQ(m.decoder[2].out_dim(), 6u);
  // Norm only on hidden layers.
  EXPECT_TRUE(m.encoder[0].has_norm());
  EXPECT_FALSE(m.encoder[2].has_norm());
  EXPECT_TRUE(m.decoder[1].has_norm());
  EXPECT_FALSE(m.decoder[2].has_norm());
}

TEST(Autoencoder, ConcatSkipWidensDecoderInputs) {
  RngStream rng(1, 0);
  const AutoencoderModel m = build(spec(6, {10, 8}, 0.5, true), rng);
  EXPECT_EQ(m.decoder[0].in_dim(), 3u);
  EXPECT_EQ(m.decoder[1].in_dim(), 16u);
  EXPECT_EQ(m.decoder[2].in_dim(), 20u);
}

TEST(Autoencoder, ZeroWeightsReconstructHalf) {
  RngStream rng(4, 0);
  AutoencoderModel m = build(spec(4, {6, 5}, 2.0, true), rng);
  m.set_parameters(Vector::Zero(static_cast<Eigen::Index>(m.parameter_count())));
  const Matrix out = forward(m, random_matrix(3, 4, rng, 0, 1));
  EXPECT_TRUE((out.array() == 0.5).all());
}

TEST(Autoencoder, SkipChangesOutput) {
  RngStream a(9, 0);
  RngStream b(9, 0);
  RngStream data(9, 1);
  const Matrix x = random_matrix(5, 4, data, 0, 1);
  const Matrix plain = forward(build(spec(4, {6, 6}, 0.5, false), a), x);
  const Matrix skip = forward(build(spec(4, {6, 6}, 0.5, true), b), x);
  EXPECT_GT((plain - skip).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Autoencoder, OutputInsideUnitCube) {
  RngStream rng(12, 0);
  for (bool skip : {false, true}) {
    const AutoencoderModel m = build(spec(7, {12, 9}, 10.0, skip), rng);
    const Matrix out = forward(m, random_matrix(50, 7, rng, 0, 1));
    EXPECT_TRUE((out.array() > 0.0).all() && (out.array() < 1.0).all());
  }
}

TEST(Autoencoder, BuildIsReproducible) {
  RngStream a(21, 3);
  RngStream b(21, 3);
  EXPECT_EQ(build(spec(3, {5}, 2.0, true), a).parameters(), build(spec(3, {5}, 2.0, true), b).parameters());
}

TEST(Autoencoder, ShapeErrors) {
  RngStream rng(1, 0);
  const AutoencoderModel m = build(spec(3, {5}, 1.0, false), rng);
  EXPECT_THROW(forward(m, Matrix::Zero(2, 4)), ShapeError);
  AutoencoderModel copy = m;
  EXPECT_THROW(copy.set_parameters(Vector::Zero(3)), ShapeError);
}

TEST(Autoencoder, HiddenPermutationSymmetry) {
  RngStream rng(31, 0);
  ArchitectureSpec s = spec(4, {6}, 0.5, false);
  const AutoencoderModel m = build(s, rng);
  const Matrix x = random_matrix(8, 4, rng, 0, 1);

  std::vector<Eigen::Index> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  AutoencoderModel p = m;
  for (Eigen::Index i = 0; i < 6; ++i) {
    p.encoder[0].weights.row(i) = m.encoder[0].weights.row(perm[static_cast<std::size_t>(i)]);
    (*p.encoder[0].norm_gain)(i) = (*m.encoder[0].norm_gain)(perm[static_cast<std::size_t>(i)]);
    (*p.encoder[0].norm_bias)(i) = (*m.encoder[0].norm_bias)(perm[static_cast<std::size_t>(i)]);
    p.encoder[1].weights.col(i) = m.encoder[1].weights.col(perm[static_cast<std::size_t>(i)]);
  }
  EXPECT_LE((forward(m, x) - forward(p, x)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(NllGaussian, HandValues) {
  Matrix x(1, 2), xh(1, 2);
  x << 1, 0;
  xh << 0, 0;
  EXPECT_NEAR(nll_gaussian(x, xh)(0), 0.25, 1e-12);
  EXPECT_NEAR(nll_gaussian(x, x)(0), 0.0, 1e-12);
  Matrix a(1, 1), b(1, 1);
  a << 0.5;
  b << 0.0;
  EXPECT_NEAR(nll_gaussian(a, b)(0), 0.125, 1e-12);
  // sigma^2 = 2: (1/(2*2)) + log(2)/2 for one dimension with residual 1.
  Matrix c(1, 1);
  c << 1.0;
  EXPECT_NEAR(nll_gaussian(c, b, 2.0)(0), 0.25 + 0.5 * std::log(2.0), 1e-12);
}

TEST(NllGaussian, NonnegativeAndZeroOnlyAtEquality) {
  RngStream rng(2, 0);
  const Matrix x = random_matrix(30, 5, rng, 0, 1);
  const Matrix y = random_matrix(30, 5, rng, 0, 1);
  EXPECT_TRUE((nll_gaussian(x, y).array() > 0.0).all());
  EXPECT_TRUE(nll_gaussian(y, y).isZero(0.0));
}

TEST(NllGaussian, Errors) {
  EXPECT_THROW(nll_gaussian(Matrix::Zero(1, 2), Matrix::Zero(1, 3)), ShapeError);
  EXPECT_THROW(nll_gaussian(Matrix::Zero(1, 2), Matrix::Zero(1, 2), 0.0), ParameterError);
}

TEST(LatentKl, ClosedForm) {
  Matrix mu(1, 2), lv(1, 2);
  mu << 1, 0;
  lv << 0, 0;
  EXPECT_NEAR(latent_kl(mu, lv)(0), 0.5, 1e-15);
  EXPECT_NEAR(latent_kl(Matrix::Zero(1, 3), Matrix::Zero(1, 3))(0), 0.0, 1e-15);
}

struct GradCase {
  bool skip;
  SkipMode mode;
  bool norm;
  ActivationKind act;
  bool variational;
  double dropout;
};

class AutoencoderGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(AutoencoderGradient, MatchesFiniteDifferences) {
  const GradCase c = GetParam();
  ArchitectureSpec s = spec(3, {5, 4}, c.variational ? 0.7 : 2.0, c.skip);
  s.skip_mode = c.mode;
  s.use_layer_norm = c.norm;
  s.activation = c.act;
  RngStream init(77, 0);
  AutoencoderModel model = build(s, init, c.variational);
  RngStream data(77, 1);
  const Matrix x = random_matrix(6, 3, data, 0, 1);
  const Vector theta = model.parameters();

  // Fixed stream per evaluation so masks and latent noise are the same draws.
  const auto objective = [&](AutoencoderModel& m, ForwardTrace* keep) {
    RngStream noise(77, 2);
    ForwardOptions opt;
    opt.dropout_rate = c.dropout;
    opt.sample_latent = c.variational;
    opt.rng = &noise;
    ForwardTrace t = forward_trace(m, x, opt);
    LossValue lv = evaluate_loss(LossKind::GaussianNll, t.output, x);
    double value = lv.value;
    if (c.variational) value += latent_kl(t.encoder.back().output, t.log_variance->output).mean();
    if (keep) *keep = std::move(t);
    return std::pair{value, lv.grad};
  };

  ForwardTrace trace;
  const auto [value, grad_out] = objective(model, &trace);
  (void)value;
  const Vector analytic = backward(model, trace, grad_out, c.variational ? 1.0 : 0.0);
  const auto f = [&](const Vector& p) {
    AutoencoderModel m = model;
    m.set_parameters(p);
    return objective(m, nullptr).first;
  };
  EXPECT_LE(relative_error(analytic, finite_difference(f, theta)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(
    Wiring, AutoencoderGradient,
    ::testing::Values(GradCase{false, SkipMode::Concat, true, ActivationKind::LeakyReLU, false, 0.0},
                      GradCase{true, SkipMode::Concat, true, ActivationKind::LeakyReLU, false, 0.0},
                      GradCase{true, SkipMode::Add, true, ActivationKind::SELU, false, 0.0},
                      GradCase{true, SkipMode::Concat, false, ActivationKind::GELU, false, 0.0},
                      GradCase{false, SkipMode::Concat, false, ActivationKind::Sigmoid, false, 0.0},
                      GradCase{true, SkipMode::Concat, true, ActivationKind::LeakyReLU, false, 0.2},
                      GradCase{false, SkipMode::Concat, true, ActivationKind::LeakyReLU, true, 0.0},
                      GradCase{true, SkipMode::Concat, true, ActivationKind::SELU, true, 0.0}));
