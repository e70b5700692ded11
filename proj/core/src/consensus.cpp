#include "ucsd/consensus.hpp"

#include <algorithm>

namespace ucsd {

namespace {

void check_map(const Map& m, const char* what) {
  if (m.rank() != 2) throw ShapeError(std::string(what) + ": expected HxW, got " + shape_str(m.shape()));
}

void check_same(const std::vector<Map>& maps, const char* what) {
  if (maps.empty()) throw ValidationError(std::string(what) + ": need at least one map");
  check_map(maps.front(), what);
  for (const auto& m : maps) {
    if (m.shape() != maps.front().shape()) {
      throw ShapeError(std::string(what) + ": map shape " + shape_str(m.shape()) + " vs " +
                       shape_str(maps.front().shape()));
    }
  }
}

}  // namespace

Thresholded adaptive_threshold(const Map& pred) {
  check_map(pred, "adaptive_threshold");
  double sum = 0.0;
  for (double v : pred.data()) sum += v;
  const double mean = sum / static_cast<double>(pred.size());
  Thresholded out{Map(pred.shape()), std::clamp(2.0 * mean, 1e-6, 1.0 - 1e-6)};
  for (std::size_t i = 0; i < pred.size(); ++i) out.binary[i] = pred[i] >= out.tau ? 1.0 : 0.0;
  return out;
}

Map majority_map(const std::vector<Map>& binaries) {
  check_same(binaries, "majority_map");
  Map out(binaries.front().shape());
  const std::size_t c = binaries.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t votes = 0;
    for (const auto& b : binaries) {
      if (b[i] != 0.0 && b[i] != 1.0) throw ValidationError("majority_map: input is not binary");
      votes += b[i] == 1.0 ? 1 : 0;
    }
    // votes / C >= 0.5 in integers.
    out[i] = 2 * votes >= c ? 1.0 : 0.0;
  }
  return out;
}

Map consensus_gray(const std::vector<Map>& preds, const std::vector<Map>& binaries, const Map& majority) {
  check_same(preds, "consensus_gray");
  check_same(binaries, "consensus_gray");
  if (preds.size() != binaries.size() || majority.shape() != preds.front().shape() ||
      binaries.front().shape() != majority.shape()) {
    throw ShapeError("consensus_gray: inconsistent prediction, binary and majority shapes");
  }
  Map out(majority.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double sum = 0.0;
    std::size_t agree = 0;
    for (std::size_t c = 0; c < preds.size(); ++c) {
      if (binaries[c][i] == majority[i]) {
        sum += preds[c][i];
        ++agree;
      }
    }
    out[i] = agree == 0 ? 0.0 : sum / static_cast<double>(agree);
  }
  return out;
}

Map average_predictions(const std::vector<Map>& preds) {
  check_same(preds, "average_predictions");
  Map out(preds.front().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double sum = 0.0;
    for (const auto& p : preds) sum += p[i];
    out[i] = sum / static_cast<double>(preds.size());
  }
  return out;
}

Map variance_map(const std::vector<Map>& preds) {
  check_same(preds, "variance_map");
  const Map mean = average_predictions(preds);
  Map out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double sum = 0.0;
    for (const auto& p : preds) sum += (p[i] - mean[i]) * (p[i] - mean[i]);
    out[i] = sum / static_cast<double>(preds.size());
  }
  return out;
}

ConsensusOutput saliency_consensus(const std::vector<Map>& preds) {
  check_same(preds, "saliency_consensus");
  std::vector<Map> binaries;
  binaries.reserve(preds.size());
  for (const auto& p : preds) binaries.push_back(adaptive_threshold(p).binary);
  ConsensusOutput out;
  out.binary_majority = majority_map(binaries);
  out.gray_consensus = consensus_gray(preds, binaries, out.binary_majority);
  out.variance = variance_map(preds);
  return out;
}

Map average_latents(const std::vector<Tensor>& zs, const ParamSet& generator, const Tensor& x,
                    const GeneratorConfig& cfg) {
  if (zs.empty()) throw ValidationError("average_latents: need at least one latent");
  Tensor mean(zs.front().shape());
  for (const auto& z : zs) {
    if (z.shape() != mean.shape()) throw ShapeError("average_latents: latent shape mismatch");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double sum = 0.0;
    for (const auto& z : zs) sum += z[i];
    mean[i] = static_cast<float>(sum / static_cast<double>(zs.size()));
  }
  return to_map(gray_prediction(generator, x, mean, cfg));
}

Map to_map(const Tensor& batch, std::size_t n) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || n >= batch.dim(0)) {
    throw ShapeError("to_map: expected Nx1xHxW, got " + shape_str(batch.shape()));
  }
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  Map out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = batch[n * h * w + i];
  return out;
}

}  // namespace ucsd
