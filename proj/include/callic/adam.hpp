// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "callic/tensor.hpp"

namespace callic {

/// Bias-corrected Adam for a single tensor. The beta powers are tracked
/// incrementally so no libm pow is involved.
template <typename T>
struct AdamState {
  Tensor<T> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double beta1_pow = 1.0, beta2_pow = 1.0;
  int64_t step = 0;

  explicit AdamState(const Shape& shape) : m(shape), v(shape) {}
};

template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& st, double lr) {
  if (!param.same_shape(grad) || !param.same_shape(st.m))
    throw ConfigError("adam_step: shape mismatch");
  st.step++;
  st.beta1_pow *= st.beta1;
  st.beta2_pow *= st.beta2;
  const T b1 = T(st.beta1), b2 = T(st.beta2);
  const T c1 = T(1.0 / (1.0 - st.beta1_pow));
  const T c2 = T(1.0 / (1.0 - st.beta2_pow));
  const T eps = T(st.eps), step_size = T(lr);
  for (int64_t i = 0; i < param.numel(); ++i) {
    T g = grad[i];
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
    T mhat = st.m[i] * c1;
    T vhat = st.v[i] * c2;
    param[i] -= step_size * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace callic
