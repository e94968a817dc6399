#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "enlfcn/error.hpp"

namespace enlfcn {

using Shape = std::vector<std::size_t>;

enum class DType { f32, f64, i32 };

std::string shape_to_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of floating point values.
///
/// The buffer length always equals the product of the extents; a rank-0
/// tensor holds exactly one element.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_to_string(shape_));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  // [C,H,W] accessors; callers guarantee rank 3.
  T& operator()(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  T& at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Channel slice of a [C,H,W] tensor.
  Tensor channel(std::size_t c) const {
    const std::size_t plane = shape_[1] * shape_[2];
    return Tensor({shape_[1], shape_[2]}, std::vector<T>(data_.begin() + c * plane, data_.begin() + (c + 1) * plane));
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw UsageError("index rank does not match tensor rank");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) throw UsageError("index out of range on axis " + std::to_string(axis));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Learnable weights of a same-padded stride-1 convolution.
template <typename T>
struct ConvWeights {
  Tensor<T> kernels;  // [out, in, k, k]
  Tensor<T> bias;     // [out]

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t kernel_size() const { return kernels.dim(2); }
};

class Rng;

/// Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out)); zero bias.
template <typename T>
ConvWeights<T> glorot_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel, Rng& rng);

/// Debug sentinel: when enabled every primitive rejects non-finite outputs.
void set_finite_check(bool enabled) noexcept;
bool finite_check_enabled() noexcept;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (finite_check_enabled() && !t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace enlfcn
