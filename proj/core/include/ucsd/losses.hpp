#pragma once

#include "ucsd/autodiff.hpp"

namespace ucsd {

struct LossConfig {
  double lambda_smooth = 0.3;
  double smooth_alpha = 10.0;
  std::size_t boundary_radius = 15;
  double boundary_amp = 5.0;
  double psi_eps = 1e-6;

  void validate() const;
};

// sRGB gamma removal. Throws ValidationError outside [0, 1].
double rgb_to_linear(double c);

// Luminance of linearized RGB. Accepts 3×H×W (returns H×W) or N×C×H×W with
// C >= 3, using the first three channels (returns N×1×H×W).
template <class T>
BasicTensor<T> rgb_to_gray(const BasicTensor<T>& rgb);

// Per-pixel weight 1 + amp·|box_mean(gt, radius) − gt|. gt is H×W or
// N×1×H×W and must be strictly binary.
template <class T>
BasicTensor<T> boundary_weight(const BasicTensor<T>& gt, const LossConfig& cfg);

// Edge-aware first-order smoothness on a gray prediction pred (N×1×H×W,
// values in [0,1]) with image intensity gray (same shape). Forward
// differences; the last row/column derivative is zero. Summed over pixels
// and both directions per sample, averaged over the batch.
template <class T>
ad::Var<T> smoothness_loss(ad::Var<T> pred, const BasicTensor<T>& gray, const LossConfig& cfg);

// Boundary-weighted BCE (weighted mean) plus weighted IoU, on logits.
// Per-sample value averaged over the batch.
template <class T>
ad::Var<T> structure_aware_loss(ad::Var<T> logits, const BasicTensor<T>& gt, const LossConfig& cfg);

// Same loss with precomputed boundary weights.
template <class T>
ad::Var<T> structure_aware_loss(ad::Var<T> logits, const BasicTensor<T>& gt,
                                const BasicTensor<T>& weights);

enum class Objective { Cvae, Abp };

// CVAE: hybrid + λ₁·smooth. ABP: reconstruction + λ₂·smooth. The two modes
// differ only in what is passed as base.
template <class T>
ad::Var<T> total_loss(Objective mode, ad::Var<T> base, ad::Var<T> smooth, double lambda);
double total_loss(Objective mode, double base, double smooth, double lambda);

}  // namespace ucsd
