#include "ucsd/cvae.hpp"

#include <algorithm>
#include <cmath>

namespace ucsd {

GaussianParams::GaussianParams(Tensor mu_, Tensor logvar_) : mu(std::move(mu_)), logvar(std::move(logvar_)) {
  if (mu.shape() != logvar.shape() || mu.rank() != 2) {
    throw ShapeError("gaussian: mu " + shape_str(mu.shape()) + " vs logvar " + shape_str(logvar.shape()));
  }
  mu.require_finite("gaussian mu");
  logvar.require_finite("gaussian logvar");
  for (auto& v : logvar.data()) {
    v = std::clamp(v, static_cast<float>(kLogvarMin), static_cast<float>(kLogvarMax));
  }
}

double GaussianParams::sigma(std::size_t n, std::size_t k) const {
  return std::exp(0.5 * static_cast<double>(logvar[n * dim() + k]));
}

std::map<std::string, Shape> encoder_schema(const EncoderConfig& cfg) {
  if (cfg.latent_dim < 1 || cfg.widths.empty()) throw ValidationError("encoder: invalid config");
  std::map<std::string, Shape> s;
  std::size_t in = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string name = "conv" + std::to_string(i);
    s[name + ".w"] = {cfg.widths[i], in, 3, 3};
    s[name + ".b"] = {cfg.widths[i]};
    in = cfg.widths[i];
  }
  const std::size_t head = 4 * cfg.latent_dim;
  s["head.w"] = {head, in, 1, 1};
  s["head.b"] = {head};
  s["fc_mu.w"] = {cfg.latent_dim, head};
  s["fc_mu.b"] = {cfg.latent_dim};
  s["fc_logvar.w"] = {cfg.latent_dim, head};
  s["fc_logvar.b"] = {cfg.latent_dim};
  return s;
}

ParamSet build_encoder(const EncoderConfig& cfg, RngStream& rng) {
  ParamSet params;
  for (const auto& [name, shape] : encoder_schema(cfg)) {
    const bool bias = name.compare(name.size() - 2, 2, ".b") == 0;
    params.emplace(name, bias ? create<float>(shape, init::Zeros{})
                              : create<float>(shape, init::Gaussian{0.0, 0.01, &rng}));
  }
  return params;
}

template <class T>
GaussianVars<T> encode(const BoundParams<T>& p, ad::Var<T> input, const EncoderConfig& cfg) {
  if (input.shape().size() != 4 || input.shape()[1] != cfg.input_channels) {
    throw ShapeError("encode: expected Nx" + std::to_string(cfg.input_channels) + "xHxW input, got " +
                     shape_str(input.shape()));
  }
  const T slope = static_cast<T>(cfg.leaky_slope);
  ad::Var<T> h = input;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string name = "conv" + std::to_string(i);
    h = ad::leaky_relu(ad::conv2d(h, p(name + ".w"), p(name + ".b"), 2, 1), slope);
  }
  auto pooled = ad::global_avg_pool(ad::conv2d(h, p("head.w"), p("head.b"), 1, 0));
  auto mu = ad::affine(pooled, p("fc_mu.w"), p("fc_mu.b"));
  auto logvar = ad::clamp(ad::affine(pooled, p("fc_logvar.w"), p("fc_logvar.b")),
                          static_cast<T>(kLogvarMin), static_cast<T>(kLogvarMax));
  return {mu, logvar};
}

GaussianParams encode(const ParamSet& params, const Tensor& input, const EncoderConfig& cfg) {
  ad::Tape<float> tape;
  BoundParams<float> bound(tape, params, false);
  auto g = encode(bound, tape.constant(input), cfg);
  return GaussianParams(g.mu.value(), g.logvar.value());
}

template <class T>
ad::Var<T> reparameterize(const GaussianVars<T>& g, const BasicTensor<T>& eps) {
  if (eps.shape() != g.mu.shape()) throw ShapeError("reparameterize: noise shape mismatch");
  auto sigma = ad::exp(ad::scale(g.logvar, T{0.5}));
  return ad::add(g.mu, ad::mul(sigma, g.mu.tape().constant(eps)));
}

Tensor standard_normal(const Shape& shape, RngStream& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

Tensor reparameterize(const GaussianParams& g, RngStream& rng) {
  Tensor z(g.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double eps = rng.normal();
    z[i] = static_cast<float>(g.mu[i] + std::exp(0.5 * static_cast<double>(g.logvar[i])) * eps);
  }
  return z;
}

template <class T>
ad::Var<T> kl_divergence(const GaussianVars<T>& q, const GaussianVars<T>& p) {
  const auto& shape = q.mu.shape();
  if (q.logvar.shape() != shape || p.mu.shape() != shape || p.logvar.shape() != shape ||
      shape.size() != 2) {
    throw ShapeError("kl_divergence: mismatched Gaussian shapes");
  }
  const std::size_t n = shape[0];
  const auto& mq = q.mu.value();
  const auto& lq = q.logvar.value();
  const auto& mp = p.mu.value();
  const auto& lp = p.logvar.value();
  double total = 0.0;
  for (std::size_t i = 0; i < mq.size(); ++i) {
    const double d = static_cast<double>(mq[i]) - mp[i];
    total += 0.5 * ((std::exp(static_cast<double>(lq[i])) + d * d) / std::exp(static_cast<double>(lp[i])) -
                    1.0 + lp[i] - lq[i]);
  }
  const T value = static_cast<T>(total / static_cast<double>(n));
  const auto mqi = q.mu.id(), lqi = q.logvar.id(), mpi = p.mu.id(), lpi = p.logvar.id();
  return q.mu.tape().record(
      "kl_divergence", BasicTensor<T>({1}, std::vector<T>{value}), {q.mu, q.logvar, p.mu, p.logvar},
      [=](ad::Tape<T>& t, std::uint32_t self) {
        const T g = t.grad_of(self)[0] / static_cast<T>(n);
        const auto& a = t.value(mqi);
        const auto& b = t.value(lqi);
        const auto& c = t.value(mpi);
        const auto& e = t.value(lpi);
        T* gmq = t.grad_accum(mqi);
        T* glq = t.grad_accum(lqi);
        T* gmp = t.grad_accum(mpi);
        T* glp = t.grad_accum(lpi);
        for (std::size_t i = 0; i < a.size(); ++i) {
          const T d = a[i] - c[i];
          const T inv_vp = std::exp(-e[i]);
          const T vq = std::exp(b[i]);
          if (gmq != nullptr) gmq[i] += g * d * inv_vp;
          if (gmp != nullptr) gmp[i] -= g * d * inv_vp;
          if (glq != nullptr) glq[i] += g * T{0.5} * (vq * inv_vp - T{1});
          if (glp != nullptr) glp[i] += g * T{0.5} * (T{1} - (vq + d * d) * inv_vp);
        }
      });
}

double kl_divergence(const GaussianParams& q, const GaussianParams& p, std::size_t n) {
  if (q.mu.shape() != p.mu.shape()) throw ShapeError("kl_divergence: dimension mismatch");
  if (n >= q.batch()) throw ShapeError("kl_divergence: batch row out of range");
  double total = 0.0;
  for (std::size_t k = 0; k < q.dim(); ++k) {
    const std::size_t i = n * q.dim() + k;
    const double lq = q.logvar[i], lp = p.logvar[i];
    const double d = static_cast<double>(q.mu[i]) - p.mu[i];
    total += 0.5 * ((std::exp(lq) + d * d) / std::exp(lp) - 1.0 + lp - lq);
  }
  return std::max(total, 0.0);
}

double anneal_weight(std::size_t ep, const AnnealSchedule& schedule) {
  if (schedule.max_epoch < 1) throw ValidationError("anneal: max_epoch must be >= 1");
  if (ep > schedule.max_epoch) {
    throw ValidationError("anneal: epoch " + std::to_string(ep) + " beyond " +
                          std::to_string(schedule.max_epoch));
  }
  return static_cast<double>(ep) / static_cast<double>(schedule.max_epoch);
}

double loss_cvae(double recon_post, double kl, double lambda_kl) { return recon_post + lambda_kl * kl; }
double loss_gsnn(double recon_prior) { return recon_prior; }
double loss_hybrid(double l_cvae, double l_gsnn, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("loss_hybrid: alpha outside [0,1]");
  return alpha * l_cvae + (1.0 - alpha) * l_gsnn;
}

template <class T>
ad::Var<T> loss_cvae(ad::Var<T> recon_post, ad::Var<T> kl, double lambda_kl) {
  return ad::add(recon_post, ad::scale(kl, static_cast<T>(lambda_kl)));
}

template <class T>
ad::Var<T> loss_gsnn(ad::Var<T> recon_prior) {
  return recon_prior;
}

template <class T>
ad::Var<T> loss_hybrid(ad::Var<T> l_cvae, ad::Var<T> l_gsnn, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("loss_hybrid: alpha outside [0,1]");
  return ad::add(ad::scale(l_cvae, static_cast<T>(alpha)), ad::scale(l_gsnn, static_cast<T>(1.0 - alpha)));
}

CvaeModel build_cvae(const CvaeTrainConfig& cfg, RngStream& rng) {
  CvaeModel model;
  RngStream gen_rng = rng.derive(purpose::kInit, 0);
  RngStream prior_rng = rng.derive(purpose::kInit, 1);
  RngStream post_rng = rng.derive(purpose::kInit, 2);
  model.generator = build_generator(cfg.generator, gen_rng);
  EncoderConfig prior_cfg = cfg.encoder;
  prior_cfg.input_channels = cfg.generator.input_channels;
  EncoderConfig post_cfg = prior_cfg;
  post_cfg.input_channels += 1;
  model.encoders.prior_theta = build_encoder(prior_cfg, prior_rng);
  model.encoders.posterior_phi = build_encoder(post_cfg, post_rng);
  return model;
}

namespace {

Tensor concat_target(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c + 1, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data().data() + i * c * hw, c * hw, out.data().data() + i * (c + 1) * hw);
    std::copy_n(y.data().data() + i * hw, hw, out.data().data() + (i * (c + 1) + c) * hw);
  }
  return out;
}

EncoderConfig with_inputs(EncoderConfig cfg, std::size_t channels) {
  cfg.input_channels = channels;
  return cfg;
}

}  // namespace

CvaeStepStats train_step_cvae(CvaeModel& model, CvaeOptimState& state, const Batch& batch,
                              std::size_t epoch, const CvaeTrainConfig& cfg, RngStream rng) {
  const std::size_t n = batch.x.dim(0);
  const std::size_t in_ch = cfg.generator.input_channels;
  const EncoderConfig prior_cfg = with_inputs(cfg.encoder, in_ch);
  const EncoderConfig post_cfg = with_inputs(cfg.encoder, in_ch + 1);
  const bool hybrid = cfg.variant == CvaeVariant::Hybrid;

  ad::Tape<float> tape;
  BoundParams<float> gen(tape, model.generator, true);
  BoundParams<float> prior(tape, model.encoders.prior_theta, true);
  auto x = tape.constant(batch.x);
  const Tensor weights = boundary_weight(batch.y, cfg.loss);
  RngStream mix_rng = rng.derive(purpose::kMix);
  RngStream eps_rng = rng.derive(purpose::kReparam);
  const Mixing mixing{true, &mix_rng};
  const auto scale = static_cast<float>(cfg.recon_scale);

  CvaeStepStats stats;
  auto prior_g = encode(prior, x, prior_cfg);
  auto z_prior = reparameterize(prior_g, standard_normal({n, cfg.generator.latent_dim}, eps_rng));
  auto logits_prior = generator_forward(gen, x, z_prior, cfg.generator, mixing);
  auto recon_prior = ad::scale(structure_aware_loss(logits_prior, batch.y, weights), scale);
  auto smooth_prior = smoothness_loss(ad::sigmoid(logits_prior), batch.gray, cfg.loss);
  stats.recon_prior = recon_prior.value()[0];

  ad::Var<float> base = loss_gsnn(recon_prior);
  ad::Var<float> smooth = smooth_prior;
  BoundParams<float> posterior;
  if (hybrid) {
    posterior = BoundParams<float>(tape, model.encoders.posterior_phi, true);
    auto post_g = encode(posterior, tape.constant(concat_target(batch.x, batch.y)), post_cfg);
    auto z_post = reparameterize(post_g, standard_normal({n, cfg.generator.latent_dim}, eps_rng));
    auto logits_post = generator_forward(gen, x, z_post, cfg.generator, mixing);
    auto recon_post = ad::scale(structure_aware_loss(logits_post, batch.y, weights), scale);
    auto kl = kl_divergence(post_g, prior_g);
    stats.lambda_kl = cfg.kl_anneal ? anneal_weight(epoch, cfg.schedule) : 1.0;
    auto smooth_post = smoothness_loss(ad::sigmoid(logits_post), batch.gray, cfg.loss);
    base = loss_hybrid(loss_cvae(recon_post, kl, stats.lambda_kl), base, cfg.alpha);
    smooth = loss_hybrid(smooth_post, smooth_prior, cfg.alpha);
    stats.recon_post = recon_post.value()[0];
    stats.kl = kl.value()[0];
  }
  auto total = total_loss(Objective::Cvae, base, smooth, cfg.loss.lambda_smooth);
  stats.smooth = smooth.value()[0];
  stats.total = total.value()[0];

  tape.backward(total);
  adam_step(model.generator, gen.grads(tape), state.generator, cfg.adam);
  adam_step(model.encoders.prior_theta, prior.grads(tape), state.prior, cfg.adam);
  if (hybrid) adam_step(model.encoders.posterior_phi, posterior.grads(tape), state.posterior, cfg.adam);
  return stats;
}

Tensor sample_prediction_cvae(const CvaeModel& model, const Tensor& x, const CvaeTrainConfig& cfg,
                              RngStream& rng, Tensor* z_out) {
  const GaussianParams g =
      encode(model.encoders.prior_theta, x, with_inputs(cfg.encoder, cfg.generator.input_channels));
  Tensor z = reparameterize(g, rng);
  Tensor logits = generator_logits(model.generator, x, z, cfg.generator);
  for (auto& v : logits.data()) v = ad::logistic(v);
  if (z_out != nullptr) *z_out = std::move(z);
  return logits;
}

#define UCSD_INSTANTIATE_CVAE(T)                                                                 \
  template GaussianVars<T> encode<T>(const BoundParams<T>&, ad::Var<T>, const EncoderConfig&);   \
  template ad::Var<T> reparameterize<T>(const GaussianVars<T>&, const BasicTensor<T>&);          \
  template ad::Var<T> kl_divergence<T>(const GaussianVars<T>&, const GaussianVars<T>&);          \
  template ad::Var<T> loss_cvae<T>(ad::Var<T>, ad::Var<T>, double);                              \
  template ad::Var<T> loss_gsnn<T>(ad::Var<T>);                                                  \
  template ad::Var<T> loss_hybrid<T>(ad::Var<T>, ad::Var<T>, double);

UCSD_INSTANTIATE_CVAE(float)
UCSD_INSTANTIATE_CVAE(double)

#undef UCSD_INSTANTIATE_CVAE

}  // namespace ucsd
