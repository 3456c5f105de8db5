#include "bae/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bae/error.hpp"
#include "bae/parallel.hpp"

namespace bae {

std::string_view to_string(InferenceMethod method) {
  switch (method) {
    case InferenceMethod::Deterministic: return "deterministic";
    case InferenceMethod::McDropout: return "mcd";
    case InferenceMethod::BayesByBackprop: return "bbb";
    case InferenceMethod::AnchoredEnsemble: return "ensemble";
    case InferenceMethod::Vae: return "vae";
  }
  return "unknown";
}

InferenceMethod parse_inference_method(std::string_view name) {
  if (name == "deterministic" || name == "ae") return InferenceMethod::Deterministic;
  if (name == "mcd") return InferenceMethod::McDropout;
  if (name == "bbb") return InferenceMethod::BayesByBackprop;
  if (name == "ensemble") return InferenceMethod::AnchoredEnsemble;
  if (name == "vae") return InferenceMethod::Vae;
  throw ParameterError("unknown inference method '" + std::string(name) + "'");
}

std::size_t default_posterior_samples(InferenceMethod method) {
  switch (method) {
    case InferenceMethod::Deterministic: return 1;
    case InferenceMethod::AnchoredEnsemble: return 10;
    case InferenceMethod::McDropout:
    case InferenceMethod::BayesByBackprop:
    case InferenceMethod::Vae: return 100;
  }
  return 1;
}

std::size_t TrainConfig::samples() const {
  return posterior_samples == 0 ? default_posterior_samples(method) : posterior_samples;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (weight_decay < 0.0) throw ParameterError("weight decay must be nonnegative");
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  if (!(prior_variance > 0.0)) throw ParameterError("prior variance must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  if (method == InferenceMethod::McDropout && dropout_rate == 0.0) {
    throw ParameterError("MC dropout needs a positive dropout rate");
  }
  if (method == InferenceMethod::Deterministic && posterior_samples > 1) {
    throw ParameterError("a deterministic autoencoder has exactly one posterior sample");
  }
}

namespace {

// Stream ids used during training; prediction uses kPredictionStream + m.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kBatchStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kMemberStreamBase = 1000;

Matrix gather_rows(const Matrix& data, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), data.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

void check_data(const ArchitectureSpec& spec, const Matrix& data) {
  if (data.rows() == 0) throw ParameterError("training data is empty");
  if (static_cast<std::size_t>(data.cols()) != spec.input_dim) {
    throw ShapeError("training data has " + std::to_string(data.cols()) + " features, architecture expects " +
                     std::to_string(spec.input_dim));
  }
}

// Runs the epoch/minibatch loop. `step(batch, rng)` performs one update and
// returns the batch objective.
template <typename Step>
void optimize(const Matrix& data, const TrainConfig& cfg, RngStream& batch_rng, TrainingHistory* history,
              Step&& step) {
  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t batch = n < cfg.full_batch_below ? n : std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), batch_rng.engine());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const Matrix xb = batch == n ? data : gather_rows(data, std::span(order).subspan(start, stop - start));
      const double loss = step(xb, batch_rng);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      }
      total += loss;
      ++batches;
    }
    if (history) history->epoch_loss.push_back(total / static_cast<double>(batches));
  }
}

double nll_objective(const Matrix& output, const Matrix& target, Matrix& grad) {
  LossValue lv = evaluate_loss(LossKind::GaussianNll, output, target);
  grad = std::move(lv.grad);
  return lv.value;
}

AutoencoderModel train_member(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                              RngStream init_rng, RngStream batch_rng, const Vector* anchor,
                              TrainingHistory* history) {
  AutoencoderModel model = build(spec, init_rng);
  Vector params = model.parameters();
  OptimizerState state = OptimizerState::for_parameters(static_cast<std::size_t>(params.size()), cfg.lr,
                                                        cfg.weight_decay);
  optimize(data, cfg, batch_rng, history, [&](const Matrix& xb, RngStream&) {
    model.set_parameters(params);
    const ForwardTrace trace = forward_trace(model, xb);
    Matrix grad_out;
    const double nll = nll_objective(trace.output, xb, grad_out);
    const Vector grad = backward(model, trace, grad_out);
    const double reg = anchor ? 0.5 * cfg.weight_decay * (params - *anchor).squaredNorm()
                              : 0.5 * cfg.weight_decay * params.squaredNorm();
    if (anchor) {
      adam_step(params, grad, state, *anchor);
    } else {
      adam_step(params, grad, state);
    }
    return nll + reg;
  });
  model.set_parameters(params);
  return model;
}

PosteriorEnsemble make_posterior(const ArchitectureSpec& spec, const TrainConfig& cfg) {
  PosteriorEnsemble p;
  p.method = cfg.method;
  p.spec = spec;
  p.posterior_samples = cfg.samples();
  p.seed = cfg.seed;
  p.dropout_rate = cfg.method == InferenceMethod::McDropout ? cfg.dropout_rate : 0.0;
  p.prior_variance = cfg.prior_variance;
  return p;
}

}  // namespace

double gaussian_kl(const Vector& mean, const Vector& log_variance, double prior_variance) {
  if (mean.size() != log_variance.size()) throw ShapeError("gaussian_kl: mean and log-variance sizes differ");
  if (!(prior_variance > 0.0)) throw ParameterError("prior variance must be positive");
  const double log_prior = std::log(prior_variance);
  return 0.5 * ((log_variance.array().exp() + mean.array().square()) / prior_variance - 1.0 -
                (log_variance.array() - log_prior))
                   .sum();
}

Vector draw_anchor(std::size_t n, double prior_variance, RngStream& rng) {
  if (!(prior_variance > 0.0)) throw ParameterError("prior variance must be positive");
  const double sd = std::sqrt(prior_variance);
  Vector a(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.normal(0.0, sd);
  return a;
}

AutoencoderModel train_map(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                           TrainingHistory* history) {
  spec.validate();
  cfg.validate();
  check_data(spec, data);
  return train_member(spec, data, cfg, RngStream(cfg.seed, kInitStream), RngStream(cfg.seed, kBatchStream),
                      nullptr, history);
}

PosteriorEnsemble train_deterministic(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                                      TrainingHistory* history) {
  TrainConfig c = cfg;
  c.method = InferenceMethod::Deterministic;
  PosteriorEnsemble p = make_posterior(spec, c);
  p.members.push_back(train_map(spec, data, c, history));
  return p;
}

PosteriorEnsemble train_anchored_ensemble(const ArchitectureSpec& spec, const Matrix& data,
                                          const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.method = InferenceMethod::AnchoredEnsemble;
  spec.validate();
  c.validate();
  check_data(spec, data);
  PosteriorEnsemble p = make_posterior(spec, c);
  const std::size_t m_count = p.posterior_samples;
  if (m_count == 0) throw ParameterError("ensemble needs at least one member");

  // Anchors are drawn up front so that they do not depend on worker scheduling.
  RngStream probe(c.seed, kInitStream);
  const std::size_t n_params = build(spec, probe).parameter_count();
  p.anchors.reserve(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    RngStream anchor_rng(c.seed, kMemberStreamBase + 3 * m);
    p.anchors.push_back(draw_anchor(n_params, c.prior_variance, anchor_rng));
  }
  p.members.resize(m_count);
  parallel_for(m_count, c.workers, [&](std::size_t m) {
    p.members[m] = train_member(spec, data, c, RngStream(c.seed, kMemberStreamBase + 3 * m + 1),
                                RngStream(c.seed, kMemberStreamBase + 3 * m + 2), &p.anchors[m], nullptr);
  });
  return p;
}

PosteriorEnsemble train_mcd(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                            TrainingHistory* history) {
  TrainConfig c = cfg;
  c.method = InferenceMethod::McDropout;
  spec.validate();
  c.validate();
  check_data(spec, data);
  if (!(c.dropout_rate > 0.0)) {
    throw ParameterError("MC dropout with rate 0 degenerates to a deterministic autoencoder");
  }
  PosteriorEnsemble p = make_posterior(spec, c);
  RngStream init_rng(c.seed, kInitStream);
  AutoencoderModel model = build(spec, init_rng);
  Vector params = model.parameters();
  OptimizerState state = OptimizerState::for_parameters(static_cast<std::size_t>(params.size()), c.lr,
                                                        c.weight_decay);
  RngStream batch_rng(c.seed, kBatchStream);
  RngStream mask_rng(c.seed, kNoiseStream);
  optimize(data, c, batch_rng, history, [&](const Matrix& xb, RngStream&) {
    model.set_parameters(params);
    ForwardOptions opts;
    opts.dropout_rate = c.dropout_rate;
    opts.rng = &mask_rng;
    const ForwardTrace trace = forward_trace(model, xb, opts);
    Matrix grad_out;
    const double nll = nll_objective(trace.output, xb, grad_out);
    const Vector grad = backward(model, trace, grad_out);
    const double reg = 0.5 * c.weight_decay * params.squaredNorm();
    adam_step(params, grad, state);
    return nll + reg;
  });
  model.set_parameters(params);
  p.members.push_back(std::move(model));
  return p;
}

PosteriorEnsemble train_bbb(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                            TrainingHistory* history) {
  TrainConfig c = cfg;
  c.method = InferenceMethod::BayesByBackprop;
  spec.validate();
  c.validate();
  check_data(spec, data);
  PosteriorEnsemble p = make_posterior(spec, c);
  RngStream init_rng(c.seed, kInitStream);
  AutoencoderModel model = build(spec, init_rng);
  const auto n = model.parameters().size();
  const double n_train = static_cast<double>(data.rows());

  // Optimized jointly as [mean; log_variance].
  Vector theta(2 * n);
  theta.head(n) = model.parameters();
  theta.tail(n).setConstant(c.bbb_initial_log_variance);
  OptimizerState state = OptimizerState::for_parameters(static_cast<std::size_t>(2 * n), c.lr, 0.0);
  RngStream batch_rng(c.seed, kBatchStream);
  RngStream noise_rng(c.seed, kNoiseStream);
  Vector eps(n);

  optimize(data, c, batch_rng, history, [&](const Matrix& xb, RngStream&) {
    const auto mean = theta.head(n);
    const auto log_var = theta.tail(n);
    for (Eigen::Index i = 0; i < n; ++i) eps(i) = noise_rng.normal();
    const Vector stddev = (0.5 * log_var.array()).exp();
    model.set_parameters(mean + stddev.cwiseProduct(eps));
    const ForwardTrace trace = forward_trace(model, xb);
    Matrix grad_out;
    const double nll = nll_objective(trace.output, xb, grad_out);
    const Vector g_w = backward(model, trace, grad_out);

    const double kl = gaussian_kl(mean, log_var, c.prior_variance) / n_train;
    Vector grad(2 * n);
    grad.head(n) = g_w + mean / (c.prior_variance * n_train);
    grad.tail(n) = (g_w.array() * eps.array() * 0.5 * stddev.array() +
                    0.5 * (log_var.array().exp() / c.prior_variance - 1.0) / n_train)
                       .matrix();
    adam_step(theta, grad, state);
    if ((theta.tail(n).array() > 20.0).any()) {
      throw DivergenceError("Bayes-by-backprop log-variance exceeded 20");
    }
    return nll + kl;
  });
  p.weight_mean = theta.head(n);
  p.weight_log_variance = theta.tail(n);
  model.set_parameters(p.weight_mean);
  p.members.push_back(std::move(model));
  return p;
}

PosteriorEnsemble train_vae(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg,
                            TrainingHistory* history) {
  TrainConfig c = cfg;
  c.method = InferenceMethod::Vae;
  spec.validate();
  c.validate();
  check_data(spec, data);
  PosteriorEnsemble p = make_posterior(spec, c);
  RngStream init_rng(c.seed, kInitStream);
  AutoencoderModel model = build(spec, init_rng, /*variational=*/true);
  Vector params = model.parameters();
  OptimizerState state = OptimizerState::for_parameters(static_cast<std::size_t>(params.size()), c.lr,
                                                        c.weight_decay);
  RngStream batch_rng(c.seed, kBatchStream);
  RngStream noise_rng(c.seed, kNoiseStream);
  constexpr double kKlWeight = 1.0;
  optimize(data, c, batch_rng, history, [&](const Matrix& xb, RngStream&) {
    model.set_parameters(params);
    ForwardOptions opts;
    opts.sample_latent = true;
    opts.rng = &noise_rng;
    const ForwardTrace trace = forward_trace(model, xb, opts);
    Matrix grad_out;
    const double nll = nll_objective(trace.output, xb, grad_out);
    const double kl = latent_kl(trace.encoder_outputs.back(), trace.log_variance->output).mean();
    if ((trace.log_variance->output.array() > 20.0).any()) {
      throw DivergenceError("VAE latent log-variance exceeded 20");
    }
    const Vector grad = backward(model, trace, grad_out, kKlWeight);
    const double reg = 0.5 * c.weight_decay * params.squaredNorm();
    adam_step(params, grad, state);
    return nll + kKlWeight * kl + reg;
  });
  model.set_parameters(params);
  p.members.push_back(std::move(model));
  return p;
}

PosteriorEnsemble train(const ArchitectureSpec& spec, const Matrix& data, const TrainConfig& cfg) {
  switch (cfg.method) {
    case InferenceMethod::Deterministic: return train_deterministic(spec, data, cfg);
    case InferenceMethod::McDropout: return train_mcd(spec, data, cfg);
    case InferenceMethod::BayesByBackprop: return train_bbb(spec, data, cfg);
    case InferenceMethod::AnchoredEnsemble: return train_anchored_ensemble(spec, data, cfg);
    case InferenceMethod::Vae: return train_vae(spec, data, cfg);
  }
  throw ParameterError("unknown inference method");
}

Matrix sample_reconstruction(const PosteriorEnsemble& p, const Matrix& x, std::size_t m) {
  if (m >= p.posterior_samples) throw ParameterError("posterior sample index out of range");
  if (p.members.empty()) throw ParameterError("posterior holds no trained network");
  RngStream rng(p.seed, PosteriorEnsemble::kPredictionStream + m);
  switch (p.method) {
    case InferenceMethod::Deterministic: return forward(p.members.front(), x);
    case InferenceMethod::AnchoredEnsemble: return forward(p.members.at(m), x);
    case InferenceMethod::McDropout: {
      ForwardOptions opts;
      opts.dropout_rate = p.dropout_rate;
      opts.rng = &rng;
      return forward_trace(p.members.front(), x, opts).output;
    }
    case InferenceMethod::BayesByBackprop: {
      AutoencoderModel model = p.members.front();
      Vector w(p.weight_mean.size());
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        w(i) = p.weight_mean(i) + std::exp(0.5 * p.weight_log_variance(i)) * rng.normal();
      }
      model.set_parameters(w);
      return forward(model, x);
    }
    case InferenceMethod::Vae: {
      ForwardOptions opts;
      opts.sample_latent = true;
      opts.rng = &rng;
      return forward_trace(p.members.front(), x, opts).output;
    }
  }
  throw ParameterError("unknown inference method");
}

Vector predictive_nll(const Matrix& x, const std::vector<Matrix>& reconstructions) {
  if (reconstructions.empty()) throw ParameterError("predictive NLL needs at least one posterior sample");
  Vector total = Vector::Zero(x.rows());
  for (const Matrix& r : reconstructions) total += nll_gaussian(x, r);
  return total / static_cast<double>(reconstructions.size());
}

Vector predictive_nll(const PosteriorEnsemble& p, const Matrix& x, std::size_t workers) {
  if (p.posterior_samples == 0) throw ParameterError("predictive NLL needs at least one posterior sample");
  if (static_cast<std::size_t>(x.cols()) != p.spec.input_dim) {
    throw ShapeError("model expects D=" + std::to_string(p.spec.input_dim) + ", data has D=" +
                     std::to_string(x.cols()));
  }
  std::vector<Vector> per_sample(p.posterior_samples);
  parallel_for(p.posterior_samples, workers,
               [&](std::size_t m) { per_sample[m] = nll_gaussian(x, sample_reconstruction(p, x, m)); });
  Vector total = Vector::Zero(x.rows());
  for (const Vector& v : per_sample) total += v;
  return total / static_cast<double>(p.posterior_samples);
}

}  // namespace bae
