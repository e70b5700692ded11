#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ucsd/aligned.hpp"
#include "ucsd/error.hpp"
#include "ucsd/rng.hpp"

namespace ucsd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. Training uses float; gradient checks instantiate
// the same code with double.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, const std::vector<T>& data);
  BasicTensor(Shape shape, AlignedVector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T> vec() const { return std::vector<T>(data_.begin(), data_.end()); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW element access; requires rank 4.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool all_finite() const;
  void require_finite(const char* where) const;

  BasicTensor reshaped(Shape shape) const;

  template <class U>
  BasicTensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

namespace init {
struct Zeros {};
struct Constant {
  double value;
};
struct Gaussian {
  double mean;
  double stddev;
  RngStream* rng;
};
struct Uniform {
  double lo;
  double hi;
  RngStream* rng;
};
}  // namespace init

using InitSpec = std::variant<init::Zeros, init::Constant, init::Gaussian, init::Uniform>;

// Throws ShapeError on an empty shape or zero dimension, ValidationError on
// non-finite or negative-stddev parameters.
template <class T>
BasicTensor<T> create(const Shape& shape, const InitSpec& spec);

}  // namespace ucsd
