#include <vector>

#include <benchmark/benchmark.h>

#include "bae/autoencoder.hpp"
#include "bae/bayes.hpp"
#include "bae/eval.hpp"
#include "bae/nn.hpp"
#include "bae/nngp.hpp"

namespace {

bae::Matrix uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  bae::RngStream rng(seed, 0);
  bae::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

// Exact GP solve; time should grow roughly as N^3.
void BM_InfiniteAutoencoderFit(benchmark::State& state) {
  const bae::Matrix x = uniform(state.range(0), 4, 1);
  bae::NNGPConfig cfg;
  cfg.bias_variance = 0.1;
  for (auto _ : state) {
    bae::InfiniteAutoencoder model(x, cfg);
    benchmark::DoNotOptimize(model.jitter_used());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_InfiniteAutoencoderFit)->RangeMultiplier(2)->Range(128, 1024)->Complexity(benchmark::oNCubed)
    ->Unit(benchmark::kMillisecond);

void BM_KernelMatrix(benchmark::State& state) {
  const bae::Matrix x = uniform(state.range(0), 4, 2);
  bae::NNGPConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(bae::kernel_matrix(x, cfg).entries.data());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KernelMatrix)->RangeMultiplier(2)->Range(128, 1024)->Complexity(benchmark::oNSquared)
    ->Unit(benchmark::kMillisecond);

// One forward/backward pass and Adam update on a 64-row batch.
void BM_TrainingStep(benchmark::State& state) {
  bae::ArchitectureSpec spec;
  spec.input_dim = 16;
  spec.hidden_widths = {50, 50};
  spec.latent_factor = state.range(0) ? 10.0 : 0.5;
  spec.skip = state.range(0) != 0;
  bae::RngStream rng(3, 0);
  bae::AutoencoderModel model = bae::build(spec, rng);
  const bae::Matrix x = uniform(64, 16, 4);
  bae::Vector theta = model.parameters();
  auto opt = bae::OptimizerState::for_parameters(static_cast<std::size_t>(theta.size()), 1e-3, 1e-10);
  for (auto _ : state) {
    const bae::ForwardTrace trace = bae::forward_trace(model, x);
    const bae::LossValue loss = bae::evaluate_loss(bae::LossKind::GaussianNll, trace.output, x);
    bae::adam_step(theta, bae::backward(model, trace, loss.grad), opt);
    model.set_parameters(theta);
  }
}
BENCHMARK(BM_TrainingStep)->Arg(0)->Arg(1);

void BM_PredictiveNll(benchmark::State& state) {
  bae::ArchitectureSpec spec;
  spec.input_dim = 16;
  spec.hidden_widths = {50, 50};
  const bae::Matrix x = uniform(256, 16, 5);
  bae::TrainConfig cfg;
  cfg.method = bae::InferenceMethod::AnchoredEnsemble;
  cfg.epochs = 1;
  const bae::PosteriorEnsemble post = bae::train(spec, x, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(bae::predictive_nll(post, x).data());
}
BENCHMARK(BM_PredictiveNll)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& state) {
  bae::RngStream rng(6, 0);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = i % 4 == 0 ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(bae::auroc(scores, labels));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(10)->Range(100, 100000)->Complexity(benchmark::oNLogN);

}  // namespace
BENCHMARK_MAIN();
