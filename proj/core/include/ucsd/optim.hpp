#pragma once

#include <cstdint>

#include "ucsd/params.hpp"

namespace ucsd {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;
};

// Bias-corrected Adam, applied in place. Every parameter needs a gradient of
// identical shape; non-finite gradients throw NumericError before any
// parameter is touched.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace ucsd
