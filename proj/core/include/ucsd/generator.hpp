#pragma once

#include <map>
#include <string>

#include "ucsd/params.hpp"

namespace ucsd {

enum class Fusion { Early, Middle, Late };

const char* to_string(Fusion f);
Fusion parse_fusion(const std::string& s);

struct GeneratorConfig {
  std::size_t input_channels = 4;
  std::size_t base_channels = 32;
  std::size_t levels = 3;
  std::size_t latent_dim = 3;
  Fusion fusion = Fusion::Early;
  float leaky_slope = 0.1f;
  // Hidden width of the attention MLP is channels / reduction (at least 1).
  std::size_t attention_reduction = 4;

  void validate() const;
  // Encoder width at a level: M·2^level capped at 4M.
  std::size_t channels(std::size_t level) const;
  // Spatial sizes must be divisible by 2^levels.
  void validate_input(std::size_t height, std::size_t width) const;
};

// Name -> shape for every generator tensor. Weights end in ".w", biases in ".b".
std::map<std::string, Shape> generator_schema(const GeneratorConfig& cfg);

// Weights ~ N(0, 0.01), biases 0, drawn in schema order.
ParamSet build_generator(const GeneratorConfig& cfg, RngStream& rng);

// Throws ShapeError unless params contain exactly the schema's tensors.
template <class T>
void check_schema(const BasicParamSet<T>& params, const std::map<std::string, Shape>& schema,
                  const char* what);

// Per-channel mixing coefficients for middle/late fusion: λ ~ U(0,1) per
// sample and channel when training, 0.5 otherwise.
struct Mixing {
  bool train = false;
  RngStream* rng = nullptr;
};

// z: N×K -> N×K×H×W.
template <class T>
ad::Var<T> tile_latent(ad::Var<T> z, std::size_t height, std::size_t width);

// feat + feat ∘ σ(fc2(leaky(fc1(gap(feat))))) with fc weights under prefix.
template <class T>
ad::Var<T> channel_attention(ad::Var<T> feat, const BoundParams<T>& params, const std::string& prefix,
                             T slope);

// λ∘feat + (1−λ)∘z_proj per channel; both N×C.
template <class T>
ad::Var<T> mix_channels(ad::Var<T> feat, ad::Var<T> z_proj, const Mixing& mixing);

// x: N×4×H×W, z: N×K -> logits N×1×H×W.
template <class T>
ad::Var<T> generator_forward(const BoundParams<T>& params, ad::Var<T> x, ad::Var<T> z,
                             const GeneratorConfig& cfg, const Mixing& mixing = {});

// Convenience: evaluates logits without keeping a tape.
Tensor generator_logits(const ParamSet& params, const Tensor& x, const Tensor& z,
                        const GeneratorConfig& cfg);

}  // namespace ucsd
