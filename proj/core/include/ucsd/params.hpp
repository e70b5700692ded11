#pragma once

#include <map>
#include <string>

#include "ucsd/autodiff.hpp"

namespace ucsd {

// Named parameter tensors. std::map keeps iteration (and therefore
// serialization and optimizer order) deterministic.
template <class T>
using BasicParamSet = std::map<std::string, BasicTensor<T>>;
using ParamSet = BasicParamSet<float>;

template <class T>
std::size_t param_count(const BasicParamSet<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

template <class U, class T>
BasicParamSet<U> cast_params(const BasicParamSet<T>& params) {
  BasicParamSet<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

// Parameters placed on a tape, looked up by name while building a forward.
template <class T>
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(ad::Tape<T>& tape, const BasicParamSet<T>& params, bool trainable) {
    for (const auto& [name, t] : params) {
      vars_.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
    }
  }

  // Wraps vars already on a tape, e.g. when a caller owns the leaves.
  static BoundParams from_vars(std::map<std::string, ad::Var<T>> vars) {
    BoundParams b;
    b.vars_ = std::move(vars);
    return b;
  }

  ad::Var<T> operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  // Gradients for every bound parameter after tape.backward().
  BasicParamSet<T> grads(const ad::Tape<T>& tape) const {
    BasicParamSet<T> out;
    for (const auto& [name, v] : vars_) out.emplace(name, tape.grad(v));
    return out;
  }

 private:
  std::map<std::string, ad::Var<T>> vars_;
};

}  // namespace ucsd
