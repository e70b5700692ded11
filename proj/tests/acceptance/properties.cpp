#include <cmath>

#include "criteria.hpp"
#include "oracles.hpp"
#include "ucsd/consensus.hpp"
#include "ucsd/losses.hpp"
#include "ucsd/metrics.hpp"

namespace acc {

using namespace ucsd;

Result criterion_consensus() {
  RngStream rng(4, 0);
  std::size_t mismatches = 0, pixels = 0;
  constexpr std::size_t kCs[] = {1, 3, 5, 7};
  for (int c = 0; c < 200; ++c) {
    const std::size_t count = kCs[c % 4];
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    std::vector<Map> preds;
    for (std::size_t k = 0; k < count; ++k) preds.push_back(oracle::random_tensor({h, w}, rng, 0, 1));
    const auto out = saliency_consensus(preds);
    std::vector<double> taus;
    for (const auto& p : preds) taus.push_back(oracle::threshold_of(p));
    for (std::size_t i = 0; i < h * w; ++i) {
      std::vector<double> g;
      for (const auto& p : preds) g.push_back(p[i]);
      const auto want = oracle::consensus_pixel(g, taus);
      mismatches += out.binary_majority[i] != want.majority || out.gray_consensus[i] != want.gray;
      ++pixels;
    }
  }
  // The worked cell: two salient votes of 0.9 and 0.7, one dissent.
  const std::vector<Map> cell = {Map({1, 2}, std::vector<double>{0.9, 0.0}),
                                 Map({1, 2}, std::vector<double>{0.7, 0.0}),
                                 Map({1, 2}, std::vector<double>{0.1, 0.3})};
  const auto worked = saliency_consensus(cell);
  const bool cell_ok = worked.binary_majority[0] == 1.0 && std::abs(worked.gray_consensus[0] - 0.8) < 1e-15;
  Result r;
  r.pass = mismatches == 0 && cell_ok;
  r.detail = "200 cases, " + std::to_string(pixels) + " pixels, " + std::to_string(mismatches) +
             " mismatches; worked cell " + fmt(worked.gray_consensus[0], "%.17g");
  return r;
}

// True when every quadrant of the centroid split is constant in gt. The
// region term then scores 1 for any prediction that is constant on each
// quadrant, so an inverted map cannot drop below 0.5.
bool quadrants_constant(const Map& g) {
  const std::size_t h = g.dim(0), w = g.dim(1);
  double total = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (g[i * w + j] == 1.0) total += 1, sx += static_cast<double>(j + 1), sy += static_cast<double>(i + 1);
    }
  }
  const auto cx = static_cast<std::size_t>(std::lround(sx / total));
  const auto cy = static_cast<std::size_t>(std::lround(sy / total));
  double first[4] = {-1, -1, -1, -1};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t q = (i < cy ? 0 : 2) + (j < cx ? 0 : 1);
      if (first[q] < 0) first[q] = g[i * w + j];
      if (first[q] != g[i * w + j]) return false;
    }
  }
  return true;
}

Result criterion_metrics() {
  RngStream rng(5, 0);
  Result r;
  r.pass = true;
  const auto fail = [&](const std::string& why) {
    r.pass = false;
    r.notes.push_back(why);
  };
  double min_s = 1, min_e = 1, min_f = 1, max_anti = 0;
  int skipped_anti = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 4 + rng.below(29), w = 4 + rng.below(29);
    Map g({h, w});
    for (auto& v : g.data()) v = rng.uniform() < 0.35 ? 1.0 : 0.0;
    g[0] = 1.0, g[1] = 0.0;
    if (mae(g, g) != 0.0) fail("mae(gt, gt) != 0");
    for (std::size_t i = 1; i < kCurvePoints; ++i) min_f = std::min(min_f, f_measure_at(g, g, i / 255.0));
    min_s = std::min(min_s, s_measure(g, g));
    min_e = std::min(min_e, e_measure_binary(adaptive_threshold(g).binary, g));
    Map inv(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) inv[i] = 1.0 - g[i];
    if (quadrants_constant(g)) {
      ++skipped_anti;
    } else {
      max_anti = std::max(max_anti, s_measure(inv, g));
    }

    const Map p = oracle::random_tensor({h, w}, rng, 0, 1);
    const MetricReport m = evaluate_pair(p, g);
    bool in_range = true;
    for (double v : {m.mae, m.mean_f, m.mean_e, m.s_measure}) in_range = in_range && v >= 0.0 && v <= 1.0;
    for (std::size_t i = 0; i < kCurvePoints; ++i) {
      in_range = in_range && m.f_curve[i] >= 0 && m.f_curve[i] <= 1 && m.e_curve[i] >= 0 && m.e_curve[i] <= 1;
    }
    if (!in_range) fail("metric outside [0,1] on random pair " + std::to_string(t));
  }
  if (min_f < 1.0 - 1e-12) fail("interior-threshold F below 1");
  if (min_s < 0.98) fail("S(gt, gt) below 0.98");
  if (min_e < 0.98) fail("adaptive E(gt, gt) below 0.98");
  Map half({8, 8});
  for (std::size_t i = 0; i < 64; ++i) half[i] = i % 8 < 4 ? 1.0 : 0.0;
  Map half_inv(half.shape());
  for (std::size_t i = 0; i < 64; ++i) half_inv[i] = 1.0 - half[i];
  const double s_half = s_measure(half_inv, half);
  max_anti = std::max(max_anti, s_half);
  if (max_anti >= 0.5) fail("anti-correlated S not below 0.5");
  if (s_half >= 0.25) fail("inverted half-plane S not below 0.25");

  double worst_smooth = 0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t n = 1 + rng.below(3), h = 2 + rng.below(31), w = 2 + rng.below(31);
    ad::Tape<double> tape;
    const double v = smoothness_loss(tape.constant(TensorD({n, 1, h, w}, rng.uniform())),
                                     oracle::random_tensor({n, 1, h, w}, rng, 0, 1), LossConfig{})
                         .value()[0];
    const double want = 2.0 * static_cast<double>(h * w) * 1e-3;
    worst_smooth = std::max(worst_smooth, std::abs(v - want) / want);
  }
  if (worst_smooth > 1e-9) fail("constant-map smoothness off by " + fmt(worst_smooth));
  r.detail = "min F " + fmt(min_f, "%.6f") + ", min S " + fmt(min_s, "%.6f") + ", min E " + fmt(min_e, "%.6f") +
             ", max anti-S " + fmt(max_anti, "%.4f") + " (" + std::to_string(skipped_anti) +
             " quadrant-constant gt skipped), smoothness rel err " + fmt(worst_smooth);
  return r;
}

}  // namespace acc
