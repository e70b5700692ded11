#pragma once

#include <array>
#include <vector>

#include "ucsd/consensus.hpp"

namespace ucsd {

inline constexpr std::size_t kCurvePoints = 256;
inline constexpr double kBeta2 = 0.3;
using Curve = std::array<double, kCurvePoints>;

// pred in [0,1], gt binary, same H×W shape.
void check_pair(const Map& pred, const Map& gt);

double mae(const Map& pred, const Map& gt);

double f_measure_at(const Map& pred, const Map& gt, double tau, double beta2 = kBeta2);
// Thresholds i/255 for i = 0..255.
Curve f_curve(const Map& pred, const Map& gt);
double mean_f(const Map& pred, const Map& gt);

// Structure measure α·S_o + (1 − α)·S_r.
double s_measure(const Map& pred, const Map& gt, double alpha = 0.5);
double s_object(const Map& pred, const Map& gt);
double s_region(const Map& pred, const Map& gt);

// Enhanced-alignment measure of pred binarized at τ (pred ≥ τ).
double e_measure_at(const Map& pred, const Map& gt, double tau);
// E-measure of an already binary map.
double e_measure_binary(const Map& binary, const Map& gt);
Curve e_curve(const Map& pred, const Map& gt);
double mean_e(const Map& pred, const Map& gt);

struct MetricReport {
  double mae = 0;
  double mean_f = 0;
  double mean_e = 0;
  double s_measure = 0;
  Curve f_curve{};
  Curve e_curve{};
  std::size_t count = 0;
};

MetricReport evaluate_pair(const Map& pred, const Map& gt);
// Uniform average over images; curves averaged pointwise.
MetricReport evaluate_dataset(const std::vector<Map>& preds, const std::vector<Map>& gts);

}  // namespace ucsd
