#include "ucsd/abp.hpp"

#include <cmath>

namespace ucsd {

void LangevinConfig::validate() const {
  if (steps < 1) throw ValidationError("langevin: steps must be >= 1");
  if (!(step_size > 0.0)) throw ValidationError("langevin: step size must be > 0");
  if (!(sigma_obs > 0.0)) throw ValidationError("langevin: sigma_obs must be > 0");
  if (!(divergence_norm > 0.0)) throw ValidationError("langevin: divergence norm must be > 0");
}

LatentBank::LatentBank(std::size_t count, std::size_t dim, RngStream& rng)
    : z_(standard_normal({count, dim}, rng)) {}

LatentBank::LatentBank(Tensor z) : z_(std::move(z)) {
  if (z_.rank() != 2) throw ShapeError("latent bank: expected NxK, got " + shape_str(z_.shape()));
  z_.require_finite("latent bank");
}

Tensor LatentBank::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t k = dim();
  Tensor out({indices.size(), k});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) {
      throw ValidationError("latent bank: index " + std::to_string(indices[r]) + " out of range " +
                            std::to_string(size()));
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = z_[indices[r] * k + j];
  }
  return out;
}

void LatentBank::scatter(const std::vector<std::size_t>& indices, const Tensor& rows) {
  const std::size_t k = dim();
  if (rows.shape() != Shape{indices.size(), k}) {
    throw ShapeError("latent bank: scatter rows " + shape_str(rows.shape()));
  }
  rows.require_finite("latent bank scatter");
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) throw ValidationError("latent bank: index out of range");
    for (std::size_t j = 0; j < k; ++j) z_[indices[r] * k + j] = rows[r * k + j];
  }
}

template <class T>
NegLogLik<T> gaussian_nll(std::function<ad::Var<T>(ad::Var<T>)> mean_fn, BasicTensor<T> target,
                          double sigma_obs) {
  if (!(sigma_obs > 0.0)) throw ValidationError("gaussian_nll: sigma_obs must be > 0");
  const T inv = static_cast<T>(1.0 / (2.0 * sigma_obs * sigma_obs));
  return [mean_fn = std::move(mean_fn), target = std::move(target), inv](ad::Tape<T>& tape,
                                                                          ad::Var<T> z) {
    auto r = ad::sub(tape.constant(target), mean_fn(z));
    return ad::scale(ad::sum(ad::mul(r, r)), inv);
  };
}

template <class T>
NegLogLik<T> generator_nll(const BasicParamSet<T>& params, BasicTensor<T> x, BasicTensor<T> y,
                           const GeneratorConfig& gen, const LangevinConfig& lcfg,
                           const LossConfig& loss, double recon_scale) {
  // params is held by pointer: the callable must not outlive it.
  const BasicParamSet<T>* pp = &params;
  if (lcfg.grad_mode == GradMode::Gaussian) {
    auto mean = [pp, x, gen](ad::Var<T> z) {
      auto& tape = z.tape();
      BoundParams<T> bound(tape, *pp, false);
      return ad::sigmoid(generator_forward(bound, tape.constant(x), z, gen));
    };
    return gaussian_nll<T>(mean, std::move(y), lcfg.sigma_obs);
  }
  BasicTensor<T> weights = boundary_weight(y, loss);
  const T scale = static_cast<T>(recon_scale * static_cast<double>(x.dim(0)));
  return [pp, x = std::move(x), y = std::move(y), weights = std::move(weights), gen,
          scale](ad::Tape<T>& tape, ad::Var<T> z) {
    BoundParams<T> bound(tape, *pp, false);
    auto logits = generator_forward(bound, tape.constant(x), z, gen);
    return ad::scale(structure_aware_loss(logits, y, weights), scale);
  };
}

template <class T>
BasicTensor<T> grad_log_joint(const NegLogLik<T>& nll, const BasicTensor<T>& z) {
  ad::Tape<T> tape;
  auto zv = tape.variable(z);
  auto loss = nll(tape, zv);
  tape.backward(loss);
  BasicTensor<T> g = tape.grad(zv);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -g[i] - z[i];
  g.require_finite("grad_log_joint");
  return g;
}

template <class T>
BasicTensor<T> langevin_step(const BasicTensor<T>& z, const BasicTensor<T>& grad, double step_size,
                             RngStream& rng, bool add_noise) {
  if (!(step_size >= 0.0)) throw ValidationError("langevin_step: step size must be >= 0");
  if (z.shape() != grad.shape()) {
    throw ShapeError("langevin_step: z " + shape_str(z.shape()) + " vs grad " + shape_str(grad.shape()));
  }
  BasicTensor<T> out(z.shape());
  const double half = 0.5 * step_size * step_size;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double v = static_cast<double>(z[i]) + half * static_cast<double>(grad[i]);
    if (add_noise) v += step_size * rng.normal();
    out[i] = static_cast<T>(v);
  }
  return out;
}

namespace {

template <class T>
double max_row_norm(const BasicTensor<T>& z) {
  const std::size_t k = z.rank() == 2 ? z.dim(1) : z.size();
  double worst = 0.0;
  for (std::size_t r = 0; r < z.size() / k; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(z[r * k + j]) * z[r * k + j];
    worst = std::max(worst, std::sqrt(s));
  }
  return worst;
}

template <class T>
bool run_chain(const NegLogLik<T>& nll, BasicTensor<T>& z, std::size_t steps, double step_size,
               double limit, RngStream& rng) {
  for (std::size_t t = 0; t < steps; ++t) {
    if (step_size == 0.0) break;
    z = langevin_step(z, grad_log_joint(nll, z), step_size, rng);
    if (!z.all_finite() || max_row_norm(z) > limit) return false;
  }
  return true;
}

}  // namespace

template <class T>
BasicTensor<T> infer_latent(const NegLogLik<T>& nll, const BasicTensor<T>& z_init,
                            const LangevinConfig& cfg, RngStream& rng) {
  cfg.validate();
  BasicTensor<T> z = z_init;
  if (run_chain(nll, z, cfg.steps, cfg.step_size, cfg.divergence_norm, rng)) return z;
  z = z_init;
  RngStream retry = rng.derive(purpose::kLangevin, 1);
  if (run_chain(nll, z, cfg.steps, 0.5 * cfg.step_size, cfg.divergence_norm, retry)) return z;
  throw NumericError("infer_latent: Langevin chain diverged (|z| > " +
                     std::to_string(cfg.divergence_norm) + ") after step-size retry");
}

AbpStepStats train_step_abp(ParamSet& generator, AdamState& state, LatentBank& bank,
                            const Batch& batch, const AbpTrainConfig& cfg, RngStream rng) {
  const std::size_t n = batch.x.dim(0);
  if (batch.indices.size() != n) throw ValidationError("train_step_abp: batch indices size mismatch");
  RngStream lang_rng = rng.derive(purpose::kLangevin);
  RngStream mix_rng = rng.derive(purpose::kMix);

  // Inferential back-propagation.
  const auto nll = generator_nll<float>(generator, batch.x, batch.y, cfg.generator, cfg.langevin,
                                        cfg.loss, cfg.recon_scale);
  Tensor z = infer_latent(nll, bank.gather(batch.indices), cfg.langevin, lang_rng);
  bank.scatter(batch.indices, z);

  // Learning back-propagation.
  ad::Tape<float> tape;
  BoundParams<float> gen(tape, generator, true);
  const Mixing mixing{true, &mix_rng};
  auto logits = generator_forward(gen, tape.constant(batch.x), tape.constant(z), cfg.generator, mixing);
  auto recon = ad::scale(structure_aware_loss(logits, batch.y, cfg.loss),
                         static_cast<float>(cfg.recon_scale));
  auto smooth = smoothness_loss(ad::sigmoid(logits), batch.gray, cfg.loss);
  auto total = total_loss(Objective::Abp, recon, smooth, cfg.loss.lambda_smooth);
  tape.backward(total);
  adam_step(generator, gen.grads(tape), state, cfg.adam);

  AbpStepStats stats;
  stats.recon = recon.value()[0];
  stats.smooth = smooth.value()[0];
  stats.total = total.value()[0];
  stats.latent_norm = max_row_norm(z);
  return stats;
}

Tensor gray_prediction(const ParamSet& generator, const Tensor& x, const Tensor& z,
                       const GeneratorConfig& cfg) {
  Tensor out = generator_logits(generator, x, z, cfg);
  for (auto& v : out.data()) v = ad::logistic(v);
  return out;
}

Tensor sample_prediction_abp(const ParamSet& generator, const Tensor& x, const GeneratorConfig& cfg,
                             RngStream& rng, const Tensor* fixed_z, Tensor* z_out) {
  Tensor z = fixed_z != nullptr ? *fixed_z : standard_normal({x.dim(0), cfg.latent_dim}, rng);
  Tensor out = gray_prediction(generator, x, z, cfg);
  if (z_out != nullptr) *z_out = std::move(z);
  return out;
}

#define UCSD_INSTANTIATE_ABP(T)                                                                   \
  template NegLogLik<T> gaussian_nll<T>(std::function<ad::Var<T>(ad::Var<T>)>, BasicTensor<T>,    \
                                        double);                                                  \
  template NegLogLik<T> generator_nll<T>(const BasicParamSet<T>&, BasicTensor<T>, BasicTensor<T>, \
                                         const GeneratorConfig&, const LangevinConfig&,           \
                                         const LossConfig&, double);                              \
  template BasicTensor<T> grad_log_joint<T>(const NegLogLik<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> langevin_step<T>(const BasicTensor<T>&, const BasicTensor<T>&, double,  \
                                           RngStream&, bool);                                     \
  template BasicTensor<T> infer_latent<T>(const NegLogLik<T>&, const BasicTensor<T>&,             \
                                          const LangevinConfig&, RngStream&);

UCSD_INSTANTIATE_ABP(float)
UCSD_INSTANTIATE_ABP(double)

#undef UCSD_INSTANTIATE_ABP

}  // namespace ucsd
