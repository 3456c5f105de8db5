#include "bae/autoencoder.hpp"

#include <cmath>
#include <string>

#include "bae/error.hpp"

namespace bae {

std::string_view to_string(ArchitectureType type) {
  switch (type) {
    case ArchitectureType::A: return "A";
    case ArchitectureType::B: return "B";
    case ArchitectureType::C: return "C";
    case ArchitectureType::D: return "D";
  }
  return "?";
}

ArchitectureType parse_architecture_type(std::string_view name) {
  if (name == "A") return ArchitectureType::A;
  if (name == "B") return ArchitectureType::B;
  if (name == "C") return ArchitectureType::C;
  if (name == "D") return ArchitectureType::D;
  throw ParameterError("unknown architecture type '" + std::string(name) + "'");
}

std::size_t ArchitectureSpec::latent_dim() const {
  const double raw = std::floor(latent_factor * static_cast<double>(input_dim) + 0.5);
  return raw < 1.0 ? 1 : static_cast<std::size_t>(raw);
}

bool ArchitectureSpec::overcomplete() const { return latent_dim() >= input_dim; }

void ArchitectureSpec::validate() const {
  if (input_dim == 0) throw ParameterError("input dimension must be positive");
  if (!(latent_factor > 0.0) || !std::isfinite(latent_factor)) {
    throw ParameterError("latent factor must be a positive finite number");
  }
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw ParameterError("hidden widths must be positive");
  }
  if (skip && hidden_widths.empty()) throw ParameterError("skip connections need at least one hidden layer");
}

ArchitectureType classify_architecture(const ArchitectureSpec& spec) {
  if (spec.overcomplete()) return spec.skip ? ArchitectureType::D : ArchitectureType::C;
  return spec.skip ? ArchitectureType::B : ArchitectureType::A;
}

namespace {

bool hidden_norm(const ArchitectureSpec& spec) { return spec.use_layer_norm; }

std::vector<const LayerParams*> ordered_layers(const AutoencoderModel& m) {
  std::vector<const LayerParams*> out;
  for (const auto& l : m.encoder) out.push_back(&l);
  if (m.latent_log_variance) out.push_back(&*m.latent_log_variance);
  for (const auto& l : m.decoder) out.push_back(&l);
  return out;
}

// Input width of decoder layer j (j >= 1 may carry a skip).
std::size_t decoder_in_dim(const ArchitectureSpec& spec, std::size_t j, std::size_t base) {
  const std::size_t hidden = spec.hidden_widths.size();
  if (j == 0 || !spec.skip || j > hidden) return base;
  return spec.skip_mode == SkipMode::Concat ? 2 * base : base;
}

Matrix apply_mask(const Matrix& m, const Matrix& mask) {
  if (mask.size() == 0) return m;
  return m.cwiseProduct(mask);
}

}  // namespace

std::size_t AutoencoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const LayerParams* l : ordered_layers(*this)) n += l->parameter_count();
  return n;
}

Vector AutoencoderModel::parameters() const {
  Vector out(static_cast<Eigen::Index>(parameter_count()));
  std::size_t offset = 0;
  for (const LayerParams* l : ordered_layers(*this)) append_parameters(*l, out, offset);
  return out;
}

void AutoencoderModel::set_parameters(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw ShapeError("set_parameters: expected " + std::to_string(parameter_count()) +
                     " values, got " + std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (auto& l : encoder) read_parameters(l, flat, offset);
  if (latent_log_variance) read_parameters(*latent_log_variance, flat, offset);
  for (auto& l : decoder) read_parameters(l, flat, offset);
}

AutoencoderModel build(const ArchitectureSpec& spec, RngStream& rng, bool variational) {
  spec.validate();
  AutoencoderModel model;
  model.spec = spec;
  const std::size_t hidden = spec.hidden_widths.size();
  const std::size_t latent = spec.latent_dim();

  std::size_t in = spec.input_dim;
  for (std::size_t w : spec.hidden_widths) {
    model.encoder.push_back(init_layer(in, w, hidden_norm(spec), rng));
    in = w;
  }
  model.encoder.push_back(init_layer(in, latent, false, rng));
  if (variational) model.latent_log_variance = init_layer(in, latent, false, rng);

  std::size_t base = latent;
  for (std::size_t j = 0; j <= hidden; ++j) {
    const bool last = j == hidden;
    const std::size_t out = last ? spec.input_dim : spec.hidden_widths[hidden - 1 - j];
    model.decoder.push_back(init_layer(decoder_in_dim(spec, j, base), out, !last && hidden_norm(spec), rng));
    base = out;
  }
  return model;
}

Vector latent_kl(const Matrix& mu, const Matrix& log_var) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols()) {
    throw ShapeError("latent_kl: mean and log-variance shapes differ");
  }
  return 0.5 * (mu.array().square() + log_var.array().exp() - 1.0 - log_var.array()).rowwise().sum().matrix();
}

ForwardTrace forward_trace(const AutoencoderModel& model, const Matrix& x, const ForwardOptions& options) {
  const ArchitectureSpec& spec = model.spec;
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim) {
    throw ShapeError("autoencoder expects " + std::to_string(spec.input_dim) + " features, got " +
                     std::to_string(x.cols()));
  }
  const bool dropout = options.dropout_rate > 0.0;
  if ((dropout || options.sample_latent) && options.rng == nullptr) {
    throw ParameterError("stochastic forward pass requires an rng");
  }
  const std::size_t hidden = spec.hidden_widths.size();
  const auto rows = static_cast<std::size_t>(x.rows());
  ForwardTrace t;
  t.encoder.reserve(hidden + 1);
  t.decoder.reserve(hidden + 1);

  Matrix h = x;
  for (std::size_t k = 0; k <= hidden; ++k) {
    const bool latent = k == hidden;
    ActivationKind act = spec.activation;
    bool norm = !latent && hidden_norm(spec);
    if (latent && model.variational()) act = ActivationKind::Identity;
    t.encoder.push_back(dense_forward_cached(h, model.encoder[k], act, norm));
    Matrix mask;
    if (dropout && !(latent && model.variational())) {
      mask = dropout_mask(rows, model.encoder[k].out_dim(), options.dropout_rate, *options.rng);
    }
    t.encoder_outputs.push_back(apply_mask(t.encoder.back().output, mask));
    t.encoder_masks.push_back(std::move(mask));
    if (!latent) h = t.encoder_outputs.back();
  }

  if (model.variational()) {
    t.log_variance = dense_forward_cached(h, *model.latent_log_variance, ActivationKind::Identity, false);
    const Matrix& mu = t.encoder_outputs.back();
    if (options.sample_latent) {
      t.noise.resize(mu.rows(), mu.cols());
      for (Eigen::Index i = 0; i < t.noise.size(); ++i) t.noise.data()[i] = options.rng->normal();
      t.latent = mu.array() + (0.5 * t.log_variance->output.array()).exp() * t.noise.array();
    } else {
      t.latent = mu;
    }
  } else {
    t.latent = t.encoder_outputs.back();
  }

  h = t.latent;
  for (std::size_t j = 0; j <= hidden; ++j) {
    const bool last = j == hidden;
    Matrix input = h;
    if (j >= 1 && spec.skip) {
      const Matrix& bypass = t.encoder_outputs[hidden - j];
      if (spec.skip_mode == SkipMode::Concat) {
        input.resize(h.rows(), h.cols() + bypass.cols());
        input << h, bypass;
      } else {
        input = h + bypass;
      }
    }
    const ActivationKind act = last ? spec.final_activation : spec.activation;
    t.decoder.push_back(dense_forward_cached(input, model.decoder[j], act, !last && hidden_norm(spec)));
    Matrix mask;
    if (dropout && !last) mask = dropout_mask(rows, model.decoder[j].out_dim(), options.dropout_rate, *options.rng);
    h = apply_mask(t.decoder.back().output, mask);
    t.decoder_masks.push_back(std::move(mask));
  }
  t.output = std::move(h);
  return t;
}

Vector backward(const AutoencoderModel& model, const ForwardTrace& trace, const Matrix& grad_output,
                double latent_kl_weight) {
  const ArchitectureSpec& spec = model.spec;
  const std::size_t hidden = spec.hidden_widths.size();
  if (grad_output.rows() != trace.output.rows() || grad_output.cols() != trace.output.cols()) {
    throw ShapeError("backward: gradient shape does not match the reconstruction");
  }

  std::vector<LayerParams> enc_grads;
  for (const auto& l : model.encoder) enc_grads.push_back(l.zeros_like());
  std::vector<LayerParams> dec_grads;
  for (const auto& l : model.decoder) dec_grads.push_back(l.zeros_like());
  std::optional<LayerParams> lv_grad;
  if (model.variational()) lv_grad = model.latent_log_variance->zeros_like();

  // Gradients arriving at post-dropout encoder outputs through skip paths.
  std::vector<Matrix> enc_out_grad(hidden + 1);

  Matrix grad = grad_output;
  for (std::size_t j = hidden + 1; j-- > 0;) {
    const bool last = j == hidden;
    grad = apply_mask(grad, trace.decoder_masks[j]);
    const ActivationKind act = last ? spec.final_activation : spec.activation;
    Matrix grad_in = dense_backward(trace.decoder[j], model.decoder[j], act, grad, dec_grads[j]);
    if (j >= 1 && spec.skip) {
      const std::size_t k = hidden - j;
      const Eigen::Index base = trace.decoder[j - 1].output.cols();
      if (spec.skip_mode == SkipMode::Concat) {
        enc_out_grad[k] = grad_in.rightCols(grad_in.cols() - base);
        grad = grad_in.leftCols(base);
      } else {
        enc_out_grad[k] = grad_in;
        grad = std::move(grad_in);
      }
    } else {
      grad = std::move(grad_in);
    }
  }

  // `grad` is now d loss / d latent.
  Matrix grad_h;
  if (model.variational()) {
    const Matrix& mu = trace.encoder_outputs.back();
    const Matrix& log_var = trace.log_variance->output;
    Matrix grad_mu = grad;
    Matrix grad_lv = Matrix::Zero(log_var.rows(), log_var.cols());
    if (trace.noise.size() > 0) {
      grad_lv = grad.array() * trace.noise.array() * 0.5 * (0.5 * log_var.array()).exp();
    }
    if (latent_kl_weight != 0.0) {
      const double scale = latent_kl_weight / static_cast<double>(mu.rows());
      grad_mu += scale * mu;
      grad_lv.array() += scale * 0.5 * (log_var.array().exp() - 1.0);
    }
    grad_h = dense_backward(trace.encoder[hidden], model.encoder[hidden], ActivationKind::Identity, grad_mu,
                            enc_grads[hidden]);
    grad_h += dense_backward(*trace.log_variance, *model.latent_log_variance, ActivationKind::Identity,
                             grad_lv, *lv_grad);
  } else {
    grad = apply_mask(grad, trace.encoder_masks[hidden]);
    grad_h = dense_backward(trace.encoder[hidden], model.encoder[hidden], spec.activation, grad,
                            enc_grads[hidden]);
  }

  for (std::size_t k = hidden; k-- > 0;) {
    if (enc_out_grad[k].size() > 0) grad_h += enc_out_grad[k];
    grad_h = apply_mask(grad_h, trace.encoder_masks[k]);
    grad_h = dense_backward(trace.encoder[k], model.encoder[k], spec.activation, grad_h, enc_grads[k]);
  }

  Vector flat(static_cast<Eigen::Index>(model.parameter_count()));
  std::size_t offset = 0;
  for (const auto& g : enc_grads) append_parameters(g, flat, offset);
  if (lv_grad) append_parameters(*lv_grad, flat, offset);
  for (const auto& g : dec_grads) append_parameters(g, flat, offset);
  return flat;
}

Matrix forward(const AutoencoderModel& model, const Matrix& x) { return forward_trace(model, x).output; }

Vector nll_gaussian(const Matrix& x, const Matrix& x_hat, double sigma2) {
  if (!(sigma2 > 0.0)) throw ParameterError("likelihood variance must be positive");
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
    throw ShapeError("nll_gaussian: input and reconstruction shapes differ");
  }
  const double d = static_cast<double>(x.cols());
  return ((x - x_hat).array().square().rowwise().sum() / (2.0 * sigma2 * d) + 0.5 * std::log(sigma2)).matrix();
}

}  // namespace bae
