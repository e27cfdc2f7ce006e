// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <utility>

#include "callic/tensor.hpp"

namespace callic {

// ---------------------------------------------------------------------------
// Causal masks.
//
// The scan order codes position (i, j) in wavefront group g = 2i + j.
// Type B admits offsets with 2*di + dj < 0 (strictly earlier groups) and
// gates everything the pixel buffer feeds. Type A admits 2*di + dj <= 0,
// which adds the centre and same-group positions such as (1, -2); that is
// safe for feature maps because a position's features never depend on any
// pixel of its own group.
// ---------------------------------------------------------------------------

inline int wavefront_group(int i, int j) { return 2 * i + j; }

enum class MaskType { kA, kB };  // A: strict past + current wavefront; B: strict past only

struct Mask {
  int k = 0;
  MaskType type = MaskType::kB;
  std::vector<uint8_t> allow;                 // k*k, row-major over (di+h, dj+h)
  std::vector<std::pair<int, int>> offsets;   // allowed (di, dj), row-major order

  bool allowed(int di, int dj) const {
    int h = k / 2;
    return allow[size_t(di + h) * k + size_t(dj + h)] != 0;
  }
  int count() const { return int(offsets.size()); }
};

inline Mask build_mask(int k, MaskType type) {
  if (k < 1 || k % 2 == 0) throw ConfigError("mask kernel extent must be odd and >= 1");
  Mask m;
  m.k = k;
  m.type = type;
  m.allow.assign(size_t(k) * k, 0);
  int h = k / 2;
  for (int di = -h; di <= h; ++di) {
    for (int dj = -h; dj <= h; ++dj) {
      int key = 2 * di + dj;
      bool ok = (type == MaskType::kA) ? key <= 0 : key < 0;
      if (ok) {
        m.allow[size_t(di + h) * k + size_t(dj + h)] = 1;
        m.offsets.emplace_back(di, dj);
      }
    }
  }
  if (m.offsets.empty()) throw ConfigError("mask admits no offsets (type B needs k >= 3)");
  return m;
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------

enum class Act { kSwish, kGelu, kSigmoid, kTanh };

template <typename T>
T sigmoid_scalar(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
T act_value(T x, Act kind) {
  switch (kind) {
    case Act::kSwish:
      return x * sigmoid_scalar(x);
    case Act::kGelu:
      return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
    case Act::kSigmoid:
      return sigmoid_scalar(x);
    case Act::kTanh:
      return std::tanh(x);
  }
  return T(0);
}

template <typename T>
T act_deriv(T x, Act kind) {
  switch (kind) {
    case Act::kSwish: {
      T s = sigmoid_scalar(x);
      return s * (T(1) + x * (T(1) - s));
    }
    case Act::kGelu: {
      T phi = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
      T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
      return phi + x * pdf;
    }
    case Act::kSigmoid: {
      T s = sigmoid_scalar(x);
      return s * (T(1) - s);
    }
    case Act::kTanh: {
      T t = std::tanh(x);
      return T(1) - t * t;
    }
  }
  return T(0);
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& x, Act kind) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = act_value(x[i], kind);
  return y;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& x, const Tensor<T>& dy, Act kind) {
  if (!x.same_shape(dy)) throw ConfigError("activation_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) dx[i] = dy[i] * act_deriv(x[i], kind);
  return dx;
}

// ---------------------------------------------------------------------------
// Affine layer: y = x * w + b, with x flattened to [rows, n_in].
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> affine_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.ndim() != 2 || x.cols() != w.dim(0) || b.numel() != w.dim(1))
    throw ConfigError("affine_forward: shape mismatch");
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor<T> y(out_shape);
  y.mat().noalias() = x.mat() * w.mat();
  y.mat().rowwise() += b.vec().transpose();
  return y;
}

/// Returns dx; accumulates into *dw / *db when non-null.
template <typename T>
Tensor<T> affine_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                          Tensor<T>* dw = nullptr, Tensor<T>* db = nullptr) {
  if (dy.cols() != w.dim(1) || dy.rows() != x.rows())
    throw ConfigError("affine_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  dx.mat().noalias() = dy.mat() * w.mat().transpose();
  if (dw) dw->mat().noalias() += x.mat().transpose() * dy.mat();
  if (db) db->vec().noalias() += dy.mat().colwise().sum().transpose();
  return dx;
}

// ---------------------------------------------------------------------------
// Masked 2-D convolution, zero padding at borders.
//
// x: [H, W, Cin], kernel: [Cout, Cin, k, k], y: [H, W, Cout].
// Contributions accumulate row-major over kernel offsets so the result is
// bitwise reproducible for a fixed build.
// ---------------------------------------------------------------------------

namespace detail {
struct OffsetRange {
  int i0, i1, j0, j1;  // valid output rows/cols for offset (di, dj)
};
inline OffsetRange offset_range(int H, int W, int di, int dj) {
  return {std::max(0, -di), H - std::max(0, di), std::max(0, -dj), W - std::max(0, dj)};
}
}  // namespace detail

template <typename T>
Tensor<T> masked_conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Mask& m) {
  const int H = x.dim(0), W = x.dim(1), cin = x.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin || kernel.dim(3) != k || k != m.k)
    throw ConfigError("masked_conv2d: shape mismatch");
  const int h = k / 2;
  Tensor<T> y({H, W, cout});
  MatX<T> koff(cin, cout);
  for (auto [di, dj] : m.offsets) {
    for (int ic = 0; ic < cin; ++ic)
      for (int oc = 0; oc < cout; ++oc) koff(ic, oc) = kernel(oc, ic, di + h, dj + h);
    auto r = detail::offset_range(H, W, di, dj);
    if (r.j1 <= r.j0) continue;
    for (int i = r.i0; i < r.i1; ++i) {
      CMapMat<T> xs(x.data() + (size_t(i + di) * W + (r.j0 + dj)) * cin, r.j1 - r.j0, cin);
      MapMat<T> ys(y.data() + (size_t(i) * W + r.j0) * cout, r.j1 - r.j0, cout);
      ys.noalias() += xs * koff;
    }
  }
  return y;
}

/// Returns dx; accumulates into *dk when non-null. Masked-out kernel
/// entries receive zero gradient.
template <typename T>
Tensor<T> masked_conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Mask& m,
                                 const Tensor<T>& dy, Tensor<T>* dk = nullptr) {
  const int H = x.dim(0), W = x.dim(1), cin = x.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2), h = k / 2;
  if (dy.dim(0) != H || dy.dim(1) != W || dy.dim(2) != cout)
    throw ConfigError("masked_conv2d_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  MatX<T> koff(cin, cout), goff(cin, cout);
  for (auto [di, dj] : m.offsets) {
    for (int ic = 0; ic < cin; ++ic)
      for (int oc = 0; oc < cout; ++oc) koff(ic, oc) = kernel(oc, ic, di + h, dj + h);
    goff.setZero();
    auto r = detail::offset_range(H, W, di, dj);
    if (r.j1 <= r.j0) continue;
    for (int i = r.i0; i < r.i1; ++i) {
      CMapMat<T> xs(x.data() + (size_t(i + di) * W + (r.j0 + dj)) * cin, r.j1 - r.j0, cin);
      CMapMat<T> gs(dy.data() + (size_t(i) * W + r.j0) * cout, r.j1 - r.j0, cout);
      MapMat<T> dxs(dx.data() + (size_t(i + di) * W + (r.j0 + dj)) * cin, r.j1 - r.j0, cin);
      dxs.noalias() += gs * koff.transpose();
      if (dk) goff.noalias() += xs.transpose() * gs;
    }
    if (dk)
      for (int ic = 0; ic < cin; ++ic)
        for (int oc = 0; oc < cout; ++oc) (*dk)(oc, ic, di + h, dj + h) += goff(ic, oc);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Masked depthwise convolution.
//
// x: [H, W, C], kernel: [C, 1, k, k], y: [H, W, C]; channel c only sees
// channel c.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> masked_dwconv_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Mask& m) {
  const int H = x.dim(0), W = x.dim(1), c = x.dim(2);
  const int k = kernel.dim(2), h = k / 2;
  if (kernel.dim(0) != c || kernel.dim(1) != 1 || kernel.dim(3) != k || k != m.k)
    throw ConfigError("masked_dwconv: shape mismatch");
  Tensor<T> y({H, W, c});
  VecX<T> koff(c);
  for (auto [di, dj] : m.offsets) {
    for (int ch = 0; ch < c; ++ch) koff(ch) = kernel(ch, 0, di + h, dj + h);
    auto r = detail::offset_range(H, W, di, dj);
    if (r.j1 <= r.j0) continue;
    for (int i = r.i0; i < r.i1; ++i) {
      CMapMat<T> xs(x.data() + (size_t(i + di) * W + (r.j0 + dj)) * c, r.j1 - r.j0, c);
      MapMat<T> ys(y.data() + (size_t(i) * W + r.j0) * c, r.j1 - r.j0, c);
      ys.array() += xs.array().rowwise() * koff.transpose().array();
    }
  }
  return y;
}

template <typename T>
Tensor<T> masked_dwconv_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Mask& m,
                                 const Tensor<T>& dy, Tensor<T>* dk = nullptr) {
  const int H = x.dim(0), W = x.dim(1), c = x.dim(2);
  const int k = kernel.dim(2), h = k / 2;
  if (!dy.same_shape(x)) throw ConfigError("masked_dwconv_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  VecX<T> koff(c), goff(c);
  for (auto [di, dj] : m.offsets) {
    for (int ch = 0; ch < c; ++ch) koff(ch) = kernel(ch, 0, di + h, dj + h);
    goff.setZero();
    auto r = detail::offset_range(H, W, di, dj);
    if (r.j1 <= r.j0) continue;
    for (int i = r.i0; i < r.i1; ++i) {
      CMapMat<T> xs(x.data() + (size_t(i + di) * W + (r.j0 + dj)) * c, r.j1 - r.j0, c);
      CMapMat<T> gs(dy.data() + (size_t(i) * W + r.j0) * c, r.j1 - r.j0, c);
      MapMat<T> dxs(dx.data() + (size_t(i + di) * W + (r.j0 + dj)) * c, r.j1 - r.j0, c);
      dxs.array() += gs.array().rowwise() * koff.transpose().array();
      if (dk) goff += (xs.array() * gs.array()).colwise().sum().matrix().transpose();
    }
    if (dk)
      for (int ch = 0; ch < c; ++ch) (*dk)(ch, 0, di + h, dj + h) += goff(ch);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Layer normalisation over the last axis, learnable scale/offset.
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormStats {
  Tensor<T> mean;     // [rows]
  Tensor<T> inv_std;  // [rows]
};

template <typename T>
Tensor<T> layer_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             LayerNormStats<T>* stats = nullptr) {
  const int64_t rows = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c) throw ConfigError("layer_norm: shape mismatch");
  Tensor<T> y(x.shape());
  Tensor<T> mean({int(rows)}), inv_std({int(rows)});
  auto xm = x.mat();
  auto ym = y.mat();
  for (int64_t r = 0; r < rows; ++r) {
    T mu = xm.row(r).mean();
    T var = (xm.row(r).array() - mu).square().sum() / T(c);
    T is = T(1) / std::sqrt(var + T(kLayerNormEps));
    mean[r] = mu;
    inv_std[r] = is;
    ym.row(r).array() =
        ((xm.row(r).array() - mu) * is) * gamma.vec().transpose().array() +
        beta.vec().transpose().array();
  }
  if (stats) {
    stats->mean = std::move(mean);
    stats->inv_std = std::move(inv_std);
  }
  return y;
}

/// Returns dx; accumulates into *dgamma / *dbeta when non-null.
template <typename T>
Tensor<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                              const LayerNormStats<T>& st, const Tensor<T>& dy,
                              Tensor<T>* dgamma = nullptr, Tensor<T>* dbeta = nullptr) {
  const int64_t rows = x.rows(), c = x.cols();
  Tensor<T> dx(x.shape());
  auto xm = x.mat();
  auto gm = dy.mat();
  auto dxm = dx.mat();
  Eigen::Array<T, 1, Eigen::Dynamic> xhat(c), dxh(c);
  for (int64_t r = 0; r < rows; ++r) {
    T is = st.inv_std[r];
    xhat = (xm.row(r).array() - st.mean[r]) * is;
    dxh = gm.row(r).array() * gamma.vec().transpose().array();
    if (dgamma) dgamma->vec().transpose().array() += gm.row(r).array() * xhat;
    if (dbeta) dbeta->vec().transpose().array() += gm.row(r).array();
    T m1 = dxh.sum() / T(c);
    T m2 = (dxh * xhat).sum() / T(c);
    dxm.row(r).array() = (dxh - m1 - xhat * m2) * is;
  }
  return dx;
}

}  // namespace callic
