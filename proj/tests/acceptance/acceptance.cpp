// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "bae/autoencoder.hpp"
#include "bae/bayes.hpp"
#include "bae/data.hpp"
#include "bae/error.hpp"
#include "bae/eval.hpp"
#include "bae/experiment.hpp"
#include "bae/nn.hpp"
#include "bae/nngp.hpp"
#include "../unit/oracles.hpp"

using namespace bae;
using bae::testing::finite_difference;
using bae::testing::pairwise_auroc;
using bae::testing::random_matrix;
using bae::testing::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. Backprop vs central differences.
Outcome gradients() {
  const auto start = Clock::now();
  RngStream rng(101, 0);
  double worst = 0.0;
  std::size_t cases = 0;
  for (ActivationKind act : {ActivationKind::Identity, ActivationKind::LeakyReLU, ActivationKind::SELU,
                             ActivationKind::Sigmoid, ActivationKind::GELU}) {
    for (bool norm : {false, true}) {
      for (bool skip : {false, true}) {
        ArchitectureSpec s;
        s.input_dim = 2 + static_cast<std::size_t>(rng.uniform() * 3);
        s.hidden_widths = {3 + static_cast<std::size_t>(rng.uniform() * 4), 2 + static_cast<std::size_t>(rng.uniform() * 4)};
        s.latent_factor = rng.uniform() < 0.5 ? 0.5 : 2.0;
        s.skip = skip;
        s.activation = act;
        s.use_layer_norm = norm;
        AutoencoderModel model = build(s, rng);
        const Matrix x = random_matrix(5, static_cast<Eigen::Index>(s.input_dim), rng, 0, 1);
        const ForwardTrace trace = forward_trace(model, x);
        const LossValue lv = evaluate_loss(LossKind::GaussianNll, trace.output, x);
        const Vector analytic = backward(model, trace, lv.grad);
        const auto f = [&](const Vector& p) {
          AutoencoderModel m = model;
          m.set_parameters(p);
          return evaluate_loss(LossKind::GaussianNll, forward(m, x), x).value;
        };
        worst = std::max(worst, relative_error(analytic, finite_difference(f, model.parameters())));
        ++cases;

        // Plain dense stack through the generic backprop path.
        Network net;
        std::size_t in = s.input_dim;
        for (std::size_t width : {4u, 3u}) {
          net.push_back({init_layer(in, width, norm, rng), act, norm});
          in = width;
        }
        const Matrix target = random_matrix(5, 3, rng);
        const Gradients g = backprop(net, x, target, LossKind::HalfSquaredError);
        std::vector<LayerParams> params;
        for (const DenseLayer& l : net) params.push_back(l.params);
        const Vector theta = flatten(params);
        const auto fn = [&](const Vector& p) {
          Network copy = net;
          std::vector<LayerParams> ps = params;
          unflatten(p, ps);
          for (std::size_t i = 0; i < copy.size(); ++i) copy[i].params = ps[i];
          return evaluate_loss(LossKind::HalfSquaredError, forward(copy, x), target).value;
        };
        worst = std::max(worst, relative_error(flatten(g.layers), finite_difference(fn, theta)));
        ++cases;
      }
    }
  }
  const double t = seconds_since(start);
  return {worst <= 1e-4 && t < 10.0,
          std::to_string(cases) + " nets, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f s", t)};
}

// 2. Hand-computed NLL values.
Outcome nll_examples() {
  Matrix x1(1, 2), y1(1, 2), x2(1, 1), y2(1, 1);
  x1 << 1, 0;
  y1 << 0, 0;
  x2 << 0.5;
  y2 << 0.0;
  const Matrix same = Matrix::Constant(1, 3, 0.7);
  const double e = std::max({std::abs(nll_gaussian(same, same)(0)), std::abs(nll_gaussian(x1, y1)(0) - 0.25),
                             std::abs(nll_gaussian(x2, y2)(0) - 0.125)});
  return {e <= 1e-12, "max abs err " + fmt("%.1e", e)};
}

// 3. Skip and overcomplete autoencoders do not learn the identity.
// Encoder 2-50-50-50-dim(z), SELU, dim(z) = 1 or 100.
Outcome identity_non_learning() {
  const auto start = Clock::now();
  std::size_t below = 0;
  double worst_ratio = std::numeric_limits<double>::infinity();
  std::ostringstream failing;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    RngStream rng(seed, 0);
    const Dataset d = gen_toy(ToyKind::Blobs, 150, 0.3, rng);
    const MinMaxScaler scaler = MinMaxScaler::fit(d.x);
    const Matrix train_x = scaler.transform(d.x);

    std::vector<std::array<double, 2>> probes;
    for (int i = 0; i <= 20; ++i) {
      for (int j = 0; j <= 20; ++j) {
        const double px = -0.5 + 0.1 * i, py = -0.5 + 0.1 * j;
        double nearest = std::numeric_limits<double>::infinity();
        for (Eigen::Index r = 0; r < train_x.rows(); ++r) {
          nearest = std::min(nearest, std::hypot(train_x(r, 0) - px, train_x(r, 1) - py));
        }
        if (nearest >= 0.3) probes.push_back({px, py});
      }
    }
    Matrix probe_x(static_cast<Eigen::Index>(probes.size()), 2);
    for (std::size_t i = 0; i < probes.size(); ++i) probe_x.row(static_cast<Eigen::Index>(i)) << probes[i][0], probes[i][1];

    for (InferenceMethod method : {InferenceMethod::Deterministic, InferenceMethod::AnchoredEnsemble, InferenceMethod::Vae}) {
      for (ArchitectureType type : {ArchitectureType::B, ArchitectureType::C, ArchitectureType::D}) {
        ArchitectureSpec s;
        s.input_dim = 2;
        s.hidden_widths = {50, 50, 50};
        s.activation = ActivationKind::SELU;
        s.latent_factor = type == ArchitectureType::B ? 0.5 : 50.0;
        s.skip = type != ArchitectureType::C;
        TrainConfig t;
        t.method = method;
        t.epochs = 300;
        t.lr = 1e-2;
        t.seed = seed;
        t.posterior_samples = method == InferenceMethod::Deterministic ? 1 : 5;
        const PosteriorEnsemble post = train(s, train_x, t);
        const double ratio = predictive_nll(post, probe_x).mean() / predictive_nll(post, train_x).mean();
        worst_ratio = std::min(worst_ratio, ratio);
        if (ratio < 5.0) {
          failing << (below ? ", " : "; below 5x: ") << to_string(method) << "/" << to_string(type) << "/seed" << seed
                  << " " << fmt("%.2f", ratio);
          ++below;
        }
      }
    }
  }
  const double t = seconds_since(start);
  return {below == 0 && t < 300.0,
          "27 cells, min probe/train E[NLL] ratio " + fmt("%.2f", worst_ratio) + failing.str() + ", " + fmt("%.1f s", t)};
}

// 4. Two moons vs ring, anchored ensembles over A/B/C/D.
Outcome toy_benchmark() {
  const auto start = Clock::now();
  const auto out = std::filesystem::temp_directory_path() / "bae_acceptance_toy";
  std::filesystem::remove_all(out);
  ExperimentConfig c = parse_config(R"({
    "schema_version": 1,
    "dataset": {"source": "toy", "inliers": "two_moons", "anomalies": "ring",
                "n_inliers": 300, "n_anomalies": 100, "noise": 0.1},
    "architecture": {"hidden_widths": [50, 50]},
    "runs": [{"method": "ensemble", "arch_types": ["A", "B", "C", "D"]}],
    "train": {"epochs": 300, "lr": 0.01},
    "seeds": [0, 1, 2, 3, 4]
  })");
  c.output.dir = out;
  const ExperimentResult r = run_experiment(c);
  std::filesystem::remove_all(out);
  bool pass = r.failures == 0;
  std::ostringstream detail;
  for (ArchitectureType type : {ArchitectureType::A, ArchitectureType::B, ArchitectureType::C, ArchitectureType::D}) {
    std::vector<double> v;
    for (const RunRecord& rec : r.records) {
      if (rec.arch_type == type && rec.ok) {
        v.push_back(rec.auroc);
        pass = pass && rec.auroc > 0.5;
      }
    }
    const double mean = summary(v).mean;
    if (type != ArchitectureType::A) pass = pass && mean >= 0.8;
    detail << to_string(type) << " " << fmt("%.3f", mean) << ", ";
  }
  const double t = seconds_since(start);
  pass = pass && t < 600.0;
  detail << fmt("%.1f s", t);
  return {pass, detail.str()};
}

// 5. NNGP expectations, wide-network kernel and two-point posterior.
Outcome nngp_checks() {
  RngStream rng(505, 0);
  std::size_t outside = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal(), b = rng.normal(), cc = rng.normal(), dd = rng.normal();
    const double k11 = a * a + b * b, k12 = a * cc + b * dd, k22 = cc * cc + dd * dd;
    for (NngpActivationKind kind : {NngpActivationKind::ReLU, NngpActivationKind::LeakyReLU, NngpActivationKind::Erf}) {
      NngpActivation act;
      act.kind = kind;
      act.alpha = 0.2;
      const double exact = activation_expectation(act, k11, k12, k22);
      const McEstimate mc = mc_activation_expectation(act, k11, k12, k22, 1000000, rng);
      const double z = std::abs(mc.mean - exact) / mc.standard_error;
      worst_z = std::max(worst_z, z);
      if (z > 3.0) ++outside;
    }
  }
  const bool a_ok = outside == 0;

  NNGPConfig cfg;
  cfg.depth = 7;
  cfg.activation.kind = NngpActivationKind::LeakyReLU;
  cfg.weight_variance = default_weight_variance(cfg.activation);
  cfg.bias_variance = 0.1;
  RngStream xr(506, 0);
  const Matrix x = random_matrix(5, 3, xr);
  const Matrix analytic = kernel_matrix(x, cfg).entries;
  const Matrix empirical = bae::testing::wide_network_covariance(x, cfg, 2048, 1000, 507);
  const double frob = (analytic - empirical).norm() / analytic.norm();
  const bool b_ok = frob <= 0.05;

  const double k11 = 1.3, k12 = 0.4, k22 = 0.9, jitter = 1e-6;
  Matrix ktt(2, 2), kst(1, 2), y(2, 1);
  ktt << k11, k12, k12, k22;
  kst << 0.7, -0.2;
  y << 0.25, -0.6;
  const GpPosterior gp = gp_posterior_reconstruct(ktt, kst, Vector::Constant(1, 1.1), y, jitter);
  const double a11 = k11 + jitter, a22 = k22 + jitter, det = a11 * a22 - k12 * k12;
  const double w1 = (a22 * y(0, 0) - k12 * y(1, 0)) / det, w2 = (-k12 * y(0, 0) + a11 * y(1, 0)) / det;
  const double mean = kst(0, 0) * w1 + kst(0, 1) * w2;
  const double var = 1.1 - (kst(0, 0) * (a22 * kst(0, 0) - k12 * kst(0, 1)) + kst(0, 1) * (-k12 * kst(0, 0) + a11 * kst(0, 1))) / det;
  const double inv_err = std::max(std::abs(gp.mean(0, 0) - mean), std::abs(gp.variance(0) - var));
  const bool c_ok = inv_err <= 1e-10;

  return {a_ok && b_ok && c_ok, "(a) " + std::to_string(outside) + "/300 outside 3 SE, max z " + fmt("%.2f", worst_z) +
                                    "; (b) rel Frobenius " + fmt("%.4f", frob) + "; (c) 2x2 err " + fmt("%.1e", inv_err)};
}

// 6. Infinite-width scoring on a bimodal line.
Outcome bimodal_ordering() {
  bool pass = true;
  std::ostringstream detail;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    RngStream rng(seed, 0);
    const Dataset d = gen_toy(ToyKind::Bimodal1d, 200, 0.3, rng);
    const MinMaxScaler s = MinMaxScaler::fit(d.x);
    NNGPConfig cfg;
    cfg.activation.kind = NngpActivationKind::LeakyReLU;
    cfg.weight_variance = default_weight_variance(cfg.activation);
    cfg.bias_variance = 0.1;
    Matrix probes(5, 1);
    probes << -2.0, 2.0, 0.0, -5.0, 5.0;
    const Vector score = infbae_score(s.transform(probes), s.transform(d.x), cfg);
    const double modes = std::max(score(0), score(1));
    const bool ok = modes < score(2) && modes < score(3) && modes < score(4);
    pass = pass && ok;
    detail << "seed " << seed << (ok ? " ok" : " violated") << (seed < 2 ? ", " : "");
  }
  return {pass, detail.str()};
}

// 7. Rank AUROC vs brute-force pairwise probability.
Outcome auroc_oracle() {
  RngStream rng(707, 0);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 2 + static_cast<std::size_t>(rng.uniform() * 49);
    std::vector<double> s(n);
    std::vector<int> l(n);
    const double levels = 2.0 + std::floor(rng.uniform() * 20.0);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform() * levels);
      l[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    l[0] = kInlier;
    l[1] = kAnomaly;
    if (auroc(s, l) != pairwise_auroc(s, l)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + "/1000 mismatches"};
}

// 8. ATE from the published column means.
Outcome ate_reproduction() {
  ResultTable t;
  t.set_mean("all", "mean", ArchitectureType::A, 0.825);
  t.set_mean("all", "mean", ArchitectureType::B, 0.866);
  t.set_mean("all", "mean", ArchitectureType::C, 0.835);
  t.set_mean("all", "mean", ArchitectureType::D, 0.867);
  const auto e = ate(t);
  const double b = e.at(ArchitectureType::B), c = e.at(ArchitectureType::C), d = e.at(ArchitectureType::D);
  const bool pass = std::abs(b - 0.041) <= 1e-3 && std::abs(c - 0.010) <= 1e-3 && std::abs(d - 0.042) <= 1e-3;
  return {pass, "B " + fmt("%.3f", b) + ", C " + fmt("%.3f", c) + ", D " + fmt("%.3f", d)};
}

// 9. Same config and seed, identical exported metrics.
Outcome determinism() {
  const auto out = std::filesystem::temp_directory_path() / "bae_acceptance_det";
  ExperimentConfig c = parse_config(R"({
    "schema_version": 1,
    "dataset": {"source": "toy", "n_inliers": 90, "n_anomalies": 30},
    "architecture": {"hidden_widths": [12, 12]},
    "runs": [{"methods": ["ae", "mcd", "bbb", "vae", "ensemble"], "arch_types": ["A", "D"]}, {"method": "nngp"}],
    "train": {"epochs": 40, "lr": 0.01, "posterior_samples": 4},
    "seeds": [7, 8]
  })");
  c.output.dir = out;
  std::filesystem::remove_all(out);
  const ExperimentResult a = run_experiment(c);
  c.workers = 2;
  const ExperimentResult b = run_experiment(c);
  std::filesystem::remove_all(out);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    RunRecord x = a.records[i], y = b.records[i];
    x.wall_time_ms = y.wall_time_ms = 0.0;
    if (!x.ok || to_json_line(x) != to_json_line(y)) ++differ;
  }
  return {differ == 0 && a.records.size() == 22,
          std::to_string(a.records.size()) + " records, " + std::to_string(differ) + " differ or failed"};
}

// 10. Closed-form KL terms vs Monte Carlo.
Outcome kl_checks() {
  constexpr int n = 100000;
  RngStream rng(1010, 0);

  // Weight posterior against an isotropic prior.
  Vector mean(4), lv(4);
  mean << 0.3, -0.8, 1.1, 0.0;
  lv << -1.0, 0.4, -3.0, 0.0;
  const double prior = 0.7;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double r = 0.0;
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
      const double sd = std::exp(0.5 * lv(k)), eps = rng.normal(), w = mean(k) + sd * eps;
      r += (-0.5 * eps * eps - std::log(sd)) - (-0.5 * w * w / prior - 0.5 * std::log(prior));
    }
    sum += r;
    sq += r * r;
  }
  double mc = sum / n;
  double se = std::sqrt((sq / n - mc * mc) / (n - 1));
  const double bbb_z = std::abs(mc - gaussian_kl(mean, lv, prior)) / se;

  // Latent posterior against N(0, I).
  Matrix mu(1, 3), logvar(1, 3);
  mu << 0.5, -1.5, 0.1;
  logvar << -0.7, 0.9, -2.5;
  sum = sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double r = 0.0;
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double sd = std::exp(0.5 * logvar(0, k)), eps = rng.normal(), z = mu(0, k) + sd * eps;
      r += (-0.5 * eps * eps - std::log(sd)) + 0.5 * z * z;
    }
    sum += r;
    sq += r * r;
  }
  mc = sum / n;
  se = std::sqrt((sq / n - mc * mc) / (n - 1));
  const double vae_z = std::abs(mc - latent_kl(mu, logvar)(0)) / se;
  return {bbb_z <= 3.0 && vae_z <= 3.0, "BBB z " + fmt("%.2f", bbb_z) + ", VAE z " + fmt("%.2f", vae_z)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradients},
      {"nll exactness", nll_examples},
      {"identity non-learning", identity_non_learning},
      {"toy anomaly benchmark", toy_benchmark},
      {"nngp correctness", nngp_checks},
      {"infinite-width bimodal ordering", bimodal_ordering},
      {"auroc oracle equivalence", auroc_oracle},
      {"ate reproduction", ate_reproduction},
      {"determinism", determinism},
      {"kl closed forms", kl_checks},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
