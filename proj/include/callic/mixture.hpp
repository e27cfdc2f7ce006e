// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "callic/image.hpp"
#include "callic/model.hpp"

namespace callic {

// ---------------------------------------------------------------------------
// Discretised logistic mixture over 8-bit symbols.
//
// Pixels are normalised to [-1, 1]; a symbol's bin has half-width 1/255 and
// the first/last bins absorb the open tails. Mixture weights come from a
// softmax over shared logits (the weighting is not conditioned on the
// symbol). For RGB, the green and blue means are shifted linearly by the
// already-coded channels of the same position, with tanh-squashed
// coefficients. Raw log-scales are clamped to >= -7.
//
// Head layout per position (K = mixtures):
//   RGB:  [0,K) logits | [K,4K) means | [4K,7K) log-scales | [7K,10K) coeffs
//         means/log-scales grouped by channel; coeffs j=0: g<-r, 1: b<-r,
//         2: b<-g, each K wide.
//   Grey: [0,K) logits | [K,2K) means | [2K,3K) log-scales.
// ---------------------------------------------------------------------------

inline constexpr double kLogScaleFloor = -7.0;

struct MixLayout {
  int K = 0, C = 0;
  explicit MixLayout(const ModelConfig& cfg) : K(cfg.mixtures), C(cfg.channels) {}
  int logit(int k) const { return k; }
  int mu(int ch, int k) const { return K + ch * K + k; }
  int ls(int ch, int k) const { return K + C * K + ch * K + k; }
  int coef(int j, int k) const { return K + 2 * C * K + j * K + k; }
};

template <typename T>
inline T pixel_norm(int v) {
  return T(2) * T(v) / T(255) - T(1);
}
inline double pixel_norm_d(int v) { return 2.0 * v / 255.0 - 1.0; }

namespace detail {

template <typename T>
inline T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}
template <typename T>
inline T log_sigmoid(T x) {
  return -softplus(-x);
}

/// Stable log of the bin mass between standardised edges a < b:
/// log(sigmoid(b) - sigmoid(a)) = log_sig(b) + log_sig(-a) + log(1-e^{a-b}).
template <typename T>
inline T log_bin_mass(T a, T b) {
  return log_sigmoid(b) + log_sigmoid(-a) + std::log(-std::expm1(a - b));
}

}  // namespace detail

/// Negative log-likelihood in bits of a patch's pixels under the raw head
/// output, optionally accumulating d(bits * grad_scale)/d(raw) into d_raw.
/// `pixels` is interleaved row-major [H, W, channels].
template <typename T>
double mixture_nll(const Tensor<T>& raw, const uint8_t* pixels, const ModelConfig& cfg,
                   Tensor<T>* d_raw = nullptr, T grad_scale = T(1)) {
  const MixLayout L(cfg);
  const int K = L.K, C = L.C;
  if (raw.ndim() != 3 || raw.dim(2) != cfg.head_channels())
    throw ConfigError("mixture_nll: bad raw shape");
  if (d_raw && !d_raw->same_shape(raw)) throw ConfigError("mixture_nll: bad grad shape");
  const int64_t positions = raw.rows();
  const T delta = T(1) / T(255);
  const T coef_bits = grad_scale / T(kLn2);  // d(bits)/d(ll) = -1/ln2, scaled
  double total_bits = 0;

  std::vector<T> lw(static_cast<size_t>(K)), logp(static_cast<size_t>(K)), resp(static_cast<size_t>(K)), sm(static_cast<size_t>(K));
  for (int64_t pos = 0; pos < positions; ++pos) {
    const T* r = raw.data() + pos * cfg.head_channels();
    T* dr = d_raw ? d_raw->data() + pos * cfg.head_channels() : nullptr;
    // log-softmax of the shared logits
    T mx = r[L.logit(0)];
    for (int k = 1; k < K; ++k) mx = std::max(mx, r[L.logit(k)]);
    T se = T(0);
    for (int k = 0; k < K; ++k) se += std::exp(r[L.logit(k)] - mx);
    T lse = mx + std::log(se);
    for (int k = 0; k < K; ++k) {
      lw[size_t(k)] = r[L.logit(k)] - lse;
      sm[size_t(k)] = std::exp(lw[size_t(k)]);
    }

    const uint8_t* px = pixels + pos * C;
    for (int ch = 0; ch < C; ++ch) {
      const int x = px[ch];
      const T xb = pixel_norm<T>(x);
      const T prev_r = ch >= 1 ? pixel_norm<T>(px[0]) : T(0);
      const T prev_g = ch >= 2 ? pixel_norm<T>(px[1]) : T(0);
      // per-component log bin mass
      T cmax = T(0);
      for (int k = 0; k < K; ++k) {
        T mu = r[L.mu(ch, k)];
        T c0 = T(0), c1 = T(0), c2 = T(0);
        if (C == 3 && ch == 1) {
          c0 = std::tanh(r[L.coef(0, k)]);
          mu += c0 * prev_r;
        } else if (C == 3 && ch == 2) {
          c1 = std::tanh(r[L.coef(1, k)]);
          c2 = std::tanh(r[L.coef(2, k)]);
          mu += c1 * prev_r + c2 * prev_g;
        }
        T ls = std::max(r[L.ls(ch, k)], T(kLogScaleFloor));
        T inv_s = std::exp(-ls);
        T a = (xb - delta - mu) * inv_s;
        T b = (xb + delta - mu) * inv_s;
        T lp;
        if (x == 0)
          lp = detail::log_sigmoid(b);
        else if (x == 255)
          lp = detail::log_sigmoid(-a);
        else
          lp = detail::log_bin_mass(a, b);
        logp[size_t(k)] = lw[size_t(k)] + lp;
        cmax = k == 0 ? logp[0] : std::max(cmax, logp[size_t(k)]);
      }
      T csum = T(0);
      for (int k = 0; k < K; ++k) csum += std::exp(logp[size_t(k)] - cmax);
      T ll = cmax + std::log(csum);
      if (!std::isfinite(double(ll))) throw NumericFault("non-finite likelihood");
      total_bits -= double(ll) / kLn2;

      if (!dr) continue;
      for (int k = 0; k < K; ++k) resp[size_t(k)] = std::exp(logp[size_t(k)] - ll);
      // logits: d(-ll)/d(logit_j) = softmax_j - resp_j
      for (int k = 0; k < K; ++k) dr[L.logit(k)] += coef_bits * (sm[size_t(k)] - resp[size_t(k)]);
      for (int k = 0; k < K; ++k) {
        T mu = r[L.mu(ch, k)];
        T c0 = T(0), c1 = T(0), c2 = T(0);
        if (C == 3 && ch == 1) {
          c0 = std::tanh(r[L.coef(0, k)]);
          mu += c0 * prev_r;
        } else if (C == 3 && ch == 2) {
          c1 = std::tanh(r[L.coef(1, k)]);
          c2 = std::tanh(r[L.coef(2, k)]);
          mu += c1 * prev_r + c2 * prev_g;
        }
        T ls_raw = r[L.ls(ch, k)];
        T ls = std::max(ls_raw, T(kLogScaleFloor));
        T inv_s = std::exp(-ls);
        T a = (xb - delta - mu) * inv_s;
        T b = (xb + delta - mu) * inv_s;
        T dmu, dls;  // d(log p)/d(mu'), d(log p)/d(ls)
        if (x == 0) {
          T sb = sigmoid_scalar(-b);
          dmu = -inv_s * sb;
          dls = -b * sb;
        } else if (x == 255) {
          T sa = sigmoid_scalar(a);
          dmu = inv_s * sa;
          dls = a * sa;
        } else {
          T sa = sigmoid_scalar(a);
          T sb = sigmoid_scalar(-b);
          T D = b - a;
          dmu = inv_s * (sa - sb);
          dls = a * sa - b * sb - D / T(std::expm1(double(D)));
        }
        const T w = -coef_bits * resp[size_t(k)];  // d(bits)/d(log p_k)
        dr[L.mu(ch, k)] += w * dmu;
        if (ls_raw > T(kLogScaleFloor)) dr[L.ls(ch, k)] += w * dls;
        if (C == 3 && ch == 1) {
          dr[L.coef(0, k)] += w * dmu * prev_r * (T(1) - c0 * c0);
        } else if (C == 3 && ch == 2) {
          dr[L.coef(1, k)] += w * dmu * prev_r * (T(1) - c1 * c1);
          dr[L.coef(2, k)] += w * dmu * prev_g * (T(1) - c2 * c2);
        }
      }
    }
  }
  return total_bits;
}

// ---------------------------------------------------------------------------
// Coding-side pmf: evaluated in double so encoder and decoder derive
// bitwise-identical tables from identical raw parameters.
// ---------------------------------------------------------------------------

inline constexpr double kPmfFloor = 1e-12;

inline double sigmoid_d(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

/// Negative log-likelihood in bits of one patch under `p`, via a full-map
/// forward. With `grads`, accumulates parameter gradients (in bits).
template <typename T>
double patch_nll(const Image8& patch, const ModelParams<T>& p, ModelParams<T>* grads = nullptr,
                 T grad_scale = T(1)) {
  if (patch.channels != p.cfg.channels) throw ConfigError("patch_nll: channel mismatch");
  Tensor<T> xnorm({patch.height, patch.width, patch.channels});
  for (int64_t i = 0; i < xnorm.numel(); ++i) xnorm[i] = pixel_norm<T>(patch.pixels[size_t(i)]);
  if (!grads) {
    Tensor<T> raw = mgcf_forward(xnorm, p);
    return mixture_nll(raw, patch.pixels.data(), p.cfg);
  }
  MgcfTrace<T> trace;
  Tensor<T> raw = mgcf_forward(xnorm, p, &trace);
  Tensor<T> d_raw(raw.shape());
  double bits = mixture_nll(raw, patch.pixels.data(), p.cfg, &d_raw, grad_scale);
  mgcf_backward(trace, p, d_raw, *grads);
  return bits;
}

/// pmf over the 256 symbol bins for channel `ch` at one position.
/// `prev` holds the normalised values of this position's already-coded
/// channels (prev[0] = red for ch >= 1, prev[1] = green for ch == 2).
template <typename T>
void mixture_pmf(const T* raw_pos, int ch, const std::array<double, 2>& prev,
                 const ModelConfig& cfg, double* pmf) {
  const MixLayout L(cfg);
  const int K = L.K;
  double wmax = double(raw_pos[L.logit(0)]);
  for (int k = 1; k < K; ++k) wmax = std::max(wmax, double(raw_pos[L.logit(k)]));
  double wsum = 0;
  std::array<double, 64> w;  // mixture weights; K is small
  if (K > 64) throw ConfigError("mixture_pmf: too many components");
  for (int k = 0; k < K; ++k) {
    w[size_t(k)] = std::exp(double(raw_pos[L.logit(k)]) - wmax);
    wsum += w[size_t(k)];
  }
  for (int k = 0; k < K; ++k) w[size_t(k)] /= wsum;

  for (int x = 0; x < 256; ++x) pmf[x] = 0;
  for (int k = 0; k < K; ++k) {
    double mu = double(raw_pos[L.mu(ch, k)]);
    if (cfg.channels == 3 && ch == 1) {
      mu += std::tanh(double(raw_pos[L.coef(0, k)])) * prev[0];
    } else if (cfg.channels == 3 && ch == 2) {
      mu += std::tanh(double(raw_pos[L.coef(1, k)])) * prev[0];
      mu += std::tanh(double(raw_pos[L.coef(2, k)])) * prev[1];
    }
    double ls = std::max(double(raw_pos[L.ls(ch, k)]), kLogScaleFloor);
    double inv_s = std::exp(-ls);
    // cdf at the 255 interior bin edges; edge x sits between symbols x-1, x
    double prev_cdf = 0.0;
    for (int x = 1; x < 256; ++x) {
      double edge = (2.0 * x - 1.0) / 255.0 - 1.0;
      double c = sigmoid_d((edge - mu) * inv_s);
      pmf[x - 1] += w[size_t(k)] * (c - prev_cdf);
      prev_cdf = c;
    }
    pmf[255] += w[size_t(k)] * (1.0 - prev_cdf);
  }
  for (int x = 0; x < 256; ++x) pmf[x] = std::max(pmf[x], kPmfFloor);
}

}  // namespace callic
