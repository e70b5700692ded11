#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "ucsd/tensor.hpp"

// Minimal reverse-mode automatic differentiation. A Tape records every op in
// execution order; backward() walks it once in reverse. Ops on constants
// (nodes that do not require grad) skip their backward work entirely, which
// is how Langevin inference gets d/dz without paying for weight gradients.
namespace ucsd::ad {

template <class T>
class Tape;

// Numerically stable logistic function shared by the op and by tape-free
// evaluation paths, so both produce identical bits.
template <class T>
inline T logistic(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::uint32_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <class T>
class Tape {
 public:
  // Called during backward with the node's own id; reads grad_of(self) and
  // accumulates into inputs through grad_accum().
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(BasicTensor<T> value);
  Var<T> variable(BasicTensor<T> value);

  // Appends an op node. The node requires grad iff any input does; the
  // forward value is checked for NaN/Inf and op_name names the culprit.
  Var<T> record(const char* op_name, BasicTensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward);

  const BasicTensor<T>& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  // Accumulation buffer for id, allocated on first use; nullptr when the
  // node does not require grad.
  T* grad_accum(std::uint32_t id);
  // Upstream gradient of a node during backward; empty if none arrived.
  const AlignedVector<T>& grad_of(std::uint32_t id) const { return nodes_[id].grad; }

  // d loss / d v after backward(); zeros when no gradient reached v.
  BasicTensor<T> grad(Var<T> v) const;

  // loss must be a single-element tensor. Throws NumericError on NaN/Inf.
  void backward(Var<T> loss);

  void zero_grad();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    AlignedVector<T> grad;
    BackwardFn backward;
    const char* op = "leaf";
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// x: N×C×H×W, w: O×C×k×k (k odd), b: O.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad);

// x: N×in, w: out×in, b: out.
template <class T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b);

template <class T>
Var<T> leaky_relu(Var<T> x, T slope);
template <class T>
Var<T> sigmoid(Var<T> x);
template <class T>
Var<T> exp(Var<T> x);
// Gradient passes only where lo < x < hi.
template <class T>
Var<T> clamp(Var<T> x, T lo, T hi);

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> x, T factor);

template <class T>
Var<T> sum(Var<T> x);
template <class T>
Var<T> mean(Var<T> x);

// Concatenation and slicing along dimension 1 (channels for NCHW, features
// for N×F matrices).
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b);
template <class T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end);

template <class T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor);
// N×C×H×W -> N×C
template <class T>
Var<T> global_avg_pool(Var<T> x);
// Zero-padded (2r+1)² window mean per channel; the divisor is always (2r+1)².
template <class T>
Var<T> box_mean(Var<T> x, std::size_t radius);

// z: N×K -> N×K×H×W with channel k constant z[n,k].
template <class T>
Var<T> tile_spatial(Var<T> z, std::size_t height, std::size_t width);
// feat ∘ broadcast(gate), gate: N×C.
template <class T>
Var<T> scale_channels(Var<T> feat, Var<T> gate);
// feat + broadcast(v), v: N×C.
template <class T>
Var<T> add_channels(Var<T> feat, Var<T> v);

template <class T>
Var<T> reshape(Var<T> x, Shape shape);

// Zero-padded direct sliding window helper shared with the loss module.
template <class T>
void box_mean_plane(const T* in, T* out, std::size_t h, std::size_t w, std::size_t radius);

}  // namespace ucsd::ad
