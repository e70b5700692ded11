#pragma once

#include <vector>

#include "ucsd/abp.hpp"

// Test-time estimators over C stochastic predictions. Maps are H×W doubles.
namespace ucsd {

using Map = TensorD;

struct Thresholded {
  Map binary;
  double tau = 0;
};

// τ = clamp(2·mean(P), 1e-6, 1 − 1e-6); binary = P ≥ τ.
Thresholded adaptive_threshold(const Map& pred);

// 1 where Σ_c B^c / C ≥ 0.5 (ties are salient).
Map majority_map(const std::vector<Map>& binaries);

// Mean gray value over the predictions whose binary agrees with the majority.
Map consensus_gray(const std::vector<Map>& preds, const std::vector<Map>& binaries, const Map& majority);

Map average_predictions(const std::vector<Map>& preds);

// Population variance across the maps, per pixel.
Map variance_map(const std::vector<Map>& preds);

struct ConsensusOutput {
  Map binary_majority;
  Map gray_consensus;
  Map variance;
};

ConsensusOutput saliency_consensus(const std::vector<Map>& preds);

// Generator output at the mean latent; x is 1×C×H×W and each z is 1×K.
Map average_latents(const std::vector<Tensor>& zs, const ParamSet& generator, const Tensor& x,
                    const GeneratorConfig& cfg);

// First image of an N×1×H×W batch as an H×W map, and back.
Map to_map(const Tensor& batch, std::size_t n = 0);

}  // namespace ucsd
