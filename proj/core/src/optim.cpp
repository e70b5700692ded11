#include "ucsd/optim.hpp"

#include <cmath>

namespace ucsd {

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("adam: learning rate must be positive");
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ShapeError("adam: no gradient for '" + name + "'");
    if (it->second.shape() != p.shape()) throw ShapeError("adam: gradient shape mismatch for '" + name + "'");
    if (!it->second.all_finite()) throw NumericError("adam: non-finite gradient for '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

}  // namespace ucsd
