#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "mam4wf/errors.hpp"

namespace mam4wf {

// Dense row-major n-d array. Rank is dynamic (checkpoints and the on-disk
// container carry anything from scalars to rank-4 frame stacks); hot loops
// index flat data through explicit dims, so no stride machinery lives here.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), T(0));
  }

  Tensor(std::initializer_list<int64_t> shape)
      : Tensor(std::vector<int64_t>(shape)) {}

  static Tensor full(std::vector<int64_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-4 accessor (N, C, H, W). Callers guarantee the rank.
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Same buffer, different shape. numel must match.
  Tensor reshaped(std::vector<int64_t> shape) const {
    if (count(shape) != numel())
      throw ArgumentError("reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static int64_t count(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw ArgumentError("negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& x) {
  Tensor<To> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = static_cast<To>(x[i]);
  return y;
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& x, T factor) {
  Tensor<T> y = x;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= factor;
  return y;
}

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.rank(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.dim(i));
  }
  s += ")";
  return s;
}

}  // namespace mam4wf
