#include "ucsd/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ucsd {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  data_.assign(shape_numel(shape_), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, const std::vector<T>& data)
    : BasicTensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, AlignedVector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match buffer of " +
                     std::to_string(data_.size()));
  }
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class T>
void BasicTensor<T>::require_finite(const char* where) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(std::string(where) + ": non-finite value at flat index " +
                         std::to_string(i) + " of tensor " + shape_str(shape_));
    }
  }
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <class T>
BasicTensor<T> create(const Shape& shape, const InitSpec& spec) {
  if (shape.empty()) throw ShapeError("create: empty shape");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("create: zero dimension in " + shape_str(shape));
  }
  BasicTensor<T> t(shape);
  auto data = t.data();
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, init::Constant>) {
          if (!std::isfinite(s.value)) throw ValidationError("create: non-finite constant");
          for (auto& v : data) v = static_cast<T>(s.value);
        } else if constexpr (std::is_same_v<S, init::Gaussian>) {
          if (!std::isfinite(s.mean) || !std::isfinite(s.stddev) || s.stddev < 0) {
            throw ValidationError("create: invalid gaussian parameters");
          }
          if (s.rng == nullptr) throw ValidationError("create: gaussian init needs an rng");
          for (auto& v : data) v = static_cast<T>(s.rng->normal(s.mean, s.stddev));
        } else if constexpr (std::is_same_v<S, init::Uniform>) {
          if (!std::isfinite(s.lo) || !std::isfinite(s.hi) || s.hi < s.lo) {
            throw ValidationError("create: invalid uniform bounds");
          }
          if (s.rng == nullptr) throw ValidationError("create: uniform init needs an rng");
          for (auto& v : data) v = static_cast<T>(s.rng->uniform(s.lo, s.hi));
        }
      },
      spec);
  return t;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> create<float>(const Shape&, const InitSpec&);
template BasicTensor<double> create<double>(const Shape&, const InitSpec&);

}  // namespace ucsd
