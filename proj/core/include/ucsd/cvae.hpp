#pragma once

#include <map>
#include <string>

#include "ucsd/generator.hpp"
#include "ucsd/losses.hpp"
#include "ucsd/optim.hpp"

namespace ucsd {

// Clamp range for encoder log-variances.
inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

// Diagonal Gaussian over the latent, batch-major: mu and logvar are N×K.
struct GaussianParams {
  Tensor mu;
  Tensor logvar;

  // Clamps logvar into [kLogvarMin, kLogvarMax]; throws on non-finite input.
  GaussianParams(Tensor mu_, Tensor logvar_);
  std::size_t batch() const { return mu.dim(0); }
  std::size_t dim() const { return mu.dim(1); }
  double sigma(std::size_t n, std::size_t k) const;
};

template <class T>
struct GaussianVars {
  ad::Var<T> mu;
  ad::Var<T> logvar;
};

// PriorNet / PosteriorNet shape: five stride-2 3×3 convs, a 1×1 conv to 4K
// channels, global average pooling and two fully connected heads (mu, logvar).
struct EncoderConfig {
  std::size_t input_channels = 4;
  std::size_t latent_dim = 3;
  std::vector<std::size_t> widths{16, 32, 64, 64, 64};
  float leaky_slope = 0.1f;
};

std::map<std::string, Shape> encoder_schema(const EncoderConfig& cfg);
ParamSet build_encoder(const EncoderConfig& cfg, RngStream& rng);

struct EncoderParams {
  ParamSet prior_theta;      // input: X (4 channels)
  ParamSet posterior_phi;    // input: X ⊕ Y (5 channels)
};

template <class T>
GaussianVars<T> encode(const BoundParams<T>& params, ad::Var<T> input, const EncoderConfig& cfg);
GaussianParams encode(const ParamSet& params, const Tensor& input, const EncoderConfig& cfg);

// z = mu + exp(logvar/2) ∘ eps with eps supplied (N×K) so tests can fix it.
template <class T>
ad::Var<T> reparameterize(const GaussianVars<T>& g, const BasicTensor<T>& eps);
Tensor reparameterize(const GaussianParams& g, RngStream& rng);
// Standard-normal draw of the given shape.
Tensor standard_normal(const Shape& shape, RngStream& rng);

// KL(q || p) summed over latent dims, averaged over the batch.
template <class T>
ad::Var<T> kl_divergence(const GaussianVars<T>& q, const GaussianVars<T>& p);
// Per-sample value for batch row n.
double kl_divergence(const GaussianParams& q, const GaussianParams& p, std::size_t n = 0);

struct AnnealSchedule {
  std::size_t max_epoch = 100;
};

// λ_kl = ep / N_ep. Throws ValidationError unless 0 <= ep <= N_ep.
double anneal_weight(std::size_t ep, const AnnealSchedule& schedule);

double loss_cvae(double recon_post, double kl, double lambda_kl);
double loss_gsnn(double recon_prior);
double loss_hybrid(double l_cvae, double l_gsnn, double alpha);
template <class T>
ad::Var<T> loss_cvae(ad::Var<T> recon_post, ad::Var<T> kl, double lambda_kl);
template <class T>
ad::Var<T> loss_gsnn(ad::Var<T> recon_prior);
template <class T>
ad::Var<T> loss_hybrid(ad::Var<T> l_cvae, ad::Var<T> l_gsnn, double alpha);

// One training batch. x: N×4×H×W, y: N×1×H×W binary target, gray: N×1×H×W
// image intensity for the smoothness term.
struct Batch {
  Tensor x;
  Tensor y;
  Tensor gray;
  std::vector<std::size_t> indices;
};

enum class CvaeVariant { Hybrid, Gsnn };

struct CvaeTrainConfig {
  GeneratorConfig generator;
  EncoderConfig encoder;
  LossConfig loss;
  CvaeVariant variant = CvaeVariant::Hybrid;
  double alpha = 0.5;
  bool kl_anneal = true;
  AnnealSchedule schedule;
  // Multiplier turning the per-pixel structure-aware loss into a per-image
  // negative log-likelihood.
  double recon_scale = 1.0;
  AdamConfig adam;
};

struct CvaeModel {
  ParamSet generator;
  EncoderParams encoders;
};

CvaeModel build_cvae(const CvaeTrainConfig& cfg, RngStream& rng);

struct CvaeOptimState {
  AdamState generator;
  AdamState prior;
  AdamState posterior;
};

struct CvaeStepStats {
  double recon_post = 0;
  double recon_prior = 0;
  double kl = 0;
  double lambda_kl = 0;
  double smooth = 0;
  double total = 0;
};

// Forward with posterior z (S_CVAE) and prior z (S_GSNN), hybrid loss plus
// λ₁·smoothness, one joint Adam step on generator, prior and posterior.
CvaeStepStats train_step_cvae(CvaeModel& model, CvaeOptimState& state, const Batch& batch,
                              std::size_t epoch, const CvaeTrainConfig& cfg, RngStream rng);

// Test-time draw: z from the prior net, gray map σ(f(X, z)). Returns the z
// used through z_out when non-null.
Tensor sample_prediction_cvae(const CvaeModel& model, const Tensor& x, const CvaeTrainConfig& cfg,
                              RngStream& rng, Tensor* z_out = nullptr);

}  // namespace ucsd
