// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "callic/common.hpp"

namespace callic {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapMat = Eigen::Map<MatX<T>>;
template <typename T>
using CMapMat = Eigen::Map<const MatX<T>>;
template <typename T>
using MapVec = Eigen::Map<VecX<T>>;
template <typename T>
using CMapVec = Eigen::Map<const VecX<T>>;

using Shape = std::vector<int>;

/// Dense row-major tensor of rank 1..4, zero-initialised on construction.
/// Matrix views treat the last axis as columns and everything before it as
/// rows, which matches the [positions, channels] layout used throughout.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 4) throw ConfigError("tensor rank must be 1..4");
    int64_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw ConfigError("tensor extent must be positive");
      n *= d;
    }
    data_.assign(size_t(n), T(0));
  }
  Tensor(std::initializer_list<int> shape) : Tensor(Shape(shape)) {}

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  int ndim() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return int64_t(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Product of all axes except the last.
  int64_t rows() const { return numel() / cols(); }
  /// Extent of the last axis.
  int64_t cols() const { return shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[size_t(i)]; }
  const T& operator[](int64_t i) const { return data_[size_t(i)]; }

  T& operator()(int i, int j) { return data_[size_t(i) * shape_[1] + j]; }
  const T& operator()(int i, int j) const { return data_[size_t(i) * shape_[1] + j]; }
  T& operator()(int i, int j, int k) {
    return data_[(size_t(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    return data_[(size_t(i) * shape_[1] + j) * shape_[2] + k];
  }
  T& operator()(int i, int j, int k, int l) {
    return data_[((size_t(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(int i, int j, int k, int l) const {
    return data_[((size_t(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  MapMat<T> mat() { return MapMat<T>(data(), rows(), cols()); }
  CMapMat<T> mat() const { return CMapMat<T>(data(), rows(), cols()); }
  MapVec<T> vec() { return MapVec<T>(data(), numel()); }
  CMapVec<T> vec() const { return CMapVec<T>(data(), numel()); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T(0)); }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  const T* p = t.data();
  for (int64_t i = 0, n = t.numel(); i < n; ++i) {
    if (!std::isfinite(double(p[i]))) throw NumericFault(std::string("non-finite value in ") + what);
  }
}

template <typename T>
Tensor<T> random_normal(const Shape& shape, T stddev, Rng& rng) {
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * stddev;
  return t;
}

/// Convert element type (used to run float-trained weights through the
/// double-precision oracle paths).
template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& a) {
  Tensor<To> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = To(a[i]);
  return out;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ConfigError("max_abs_diff: shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace callic
