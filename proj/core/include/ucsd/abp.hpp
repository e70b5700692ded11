#pragma once

#include <functional>

#include "ucsd/cvae.hpp"

namespace ucsd {

enum class GradMode { Gaussian, LossBased };

struct LangevinConfig {
  std::size_t steps = 5;
  double step_size = 0.1;
  double sigma_obs = 1.0;
  GradMode grad_mode = GradMode::LossBased;
  // Chains whose latent norm exceeds this are restarted once at half step.
  double divergence_norm = 1e3;

  void validate() const;
};

// One persistent latent per training sample (N×K), initialized from N(0, I).
class LatentBank {
 public:
  LatentBank() = default;
  LatentBank(std::size_t count, std::size_t dim, RngStream& rng);
  explicit LatentBank(Tensor z);

  std::size_t size() const { return z_.empty() ? 0 : z_.dim(0); }
  std::size_t dim() const { return z_.empty() ? 0 : z_.dim(1); }
  // Rows for the given indices, stacked into len(indices)×K.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  void scatter(const std::vector<std::size_t>& indices, const Tensor& rows);
  const Tensor& tensor() const { return z_; }

 private:
  Tensor z_;
};

// Negative observation log-likelihood −log P(Y | X, z) (up to constants),
// recorded on the tape, as a function of the N×K latent. Samples in a batch
// must contribute additively so per-row gradients are independent.
template <class T>
using NegLogLik = std::function<ad::Var<T>(ad::Tape<T>&, ad::Var<T> z)>;

// ‖Y − mean(z)‖² / (2σ²) summed over the batch, where mean_fn maps z to the
// predicted observation (σ(logits) for the generator).
template <class T>
NegLogLik<T> gaussian_nll(std::function<ad::Var<T>(ad::Var<T>)> mean_fn, BasicTensor<T> target,
                          double sigma_obs);

// The generator's observation term. Gaussian mode uses σ(f(X,z)); LossBased
// uses recon_scale · structure_aware_loss per sample, summed over the batch.
template <class T>
NegLogLik<T> generator_nll(const BasicParamSet<T>& params, BasicTensor<T> x, BasicTensor<T> y,
                           const GeneratorConfig& gen, const LangevinConfig& lcfg,
                           const LossConfig& loss, double recon_scale);

// ∂/∂z log P(Y, z | X) = −∂nll/∂z − z.
template <class T>
BasicTensor<T> grad_log_joint(const NegLogLik<T>& nll, const BasicTensor<T>& z);

// z + (s²/2)·grad + s·ε, ε ~ N(0, I). add_noise = false is a test hook.
template <class T>
BasicTensor<T> langevin_step(const BasicTensor<T>& z, const BasicTensor<T>& grad, double step_size,
                             RngStream& rng, bool add_noise = true);

// cfg.steps Langevin steps from z_init. Throws NumericError if the chain
// still diverges after one restart at half the step size.
template <class T>
BasicTensor<T> infer_latent(const NegLogLik<T>& nll, const BasicTensor<T>& z_init,
                            const LangevinConfig& cfg, RngStream& rng);

struct AbpTrainConfig {
  GeneratorConfig generator;
  LossConfig loss;
  LangevinConfig langevin;
  double recon_scale = 1.0;
  AdamConfig adam;
};

struct AbpStepStats {
  double recon = 0;
  double smooth = 0;
  double total = 0;
  double latent_norm = 0;
};

// Inferential back-propagation on the batch's bank slots followed by one
// Adam step on the generator with recon + λ₂·smoothness.
AbpStepStats train_step_abp(ParamSet& generator, AdamState& state, LatentBank& bank,
                            const Batch& batch, const AbpTrainConfig& cfg, RngStream rng);

// Test-time draw: z ~ N(0, I), gray map σ(f(X, z)). With fixed_z the given
// latent is used instead; z_out receives the latent when non-null.
Tensor sample_prediction_abp(const ParamSet& generator, const Tensor& x, const GeneratorConfig& cfg,
                             RngStream& rng, const Tensor* fixed_z = nullptr, Tensor* z_out = nullptr);

// σ(generator logits); shared by every test-time path.
Tensor gray_prediction(const ParamSet& generator, const Tensor& x, const Tensor& z,
                       const GeneratorConfig& cfg);

}  // namespace ucsd
