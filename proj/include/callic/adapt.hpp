// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <numeric>

#include "callic/adam.hpp"
#include "callic/cci.hpp"
#include "callic/digest.hpp"
#include "callic/weight_prior.hpp"
#include "callic/wire.hpp"

namespace callic {

// ---------------------------------------------------------------------------
// Per-image incremental weights.
//
// Every gate/value projection and MLP up projection gets a rank-r product
// delta W' = W + A*B; every depthwise kernel gets a factored delta
// dW[o,p,q] = sum_t A[o,t] * C[p,t] * D[q,t] (optionally through a trainable
// core tensor instead of the fixed superdiagonal identity), re-masked on
// merge. The weight stream serialises the factors in block order:
// a_wa, b_wa, a_wv, b_wv, a_up, b_up, conv_a, conv_c, conv_d[, core].
// ---------------------------------------------------------------------------

struct AdapterConfig {
  int rank = 6;
  int conv_rank = 4;
  double step = 0.05;         // quantisation bin width
  double prior_scale = 0.05;  // logistic prior scale
  int k_max = 255;
  int steps = 50;
  double lr = 1e-2;
  double floor_frac = 0.2;  // schedule floor b
  double tail_frac = 0.1;   // final full-set fraction d
  double exponent = 1.0;    // schedule exponent e
  uint64_t seed = 0;
  bool trainable_core = false;

  void validate() const {
    if (rank < 1 || conv_rank < 1) throw ConfigError("adapter ranks must be >= 1");
    if (step <= 0 || prior_scale <= 0) throw ConfigError("step and prior scale must be positive");
    if (k_max < 1) throw ConfigError("k_max must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (lr <= 0) throw ConfigError("learning rate must be positive");
    if (!(floor_frac > 0 && floor_frac <= 1)) throw ConfigError("schedule floor must be in (0, 1]");
    if (!(tail_frac >= 0 && tail_frac < 1)) throw ConfigError("schedule tail must be in [0, 1)");
    if (!(exponent > 0)) throw ConfigError("schedule exponent must be positive");
  }

  WeightPrior prior() const { return WeightPrior{step, prior_scale, k_max}; }

  /// Identity of everything a decoder must agree on to interpret the
  /// weight stream.
  std::array<uint8_t, 8> digest() const {
    WireWriter w;
    w.u32(uint32_t(rank));
    w.u32(uint32_t(conv_rank));
    w.f64(step);
    w.f64(prior_scale);
    w.u32(uint32_t(k_max));
    w.u8(trainable_core ? 1 : 0);
    return digest64(w.out.data(), w.out.size());
  }
};

template <typename T>
struct BlockAdapters {
  Tensor<T> a_wa, b_wa;  // [m, r], [r, m]
  Tensor<T> a_wv, b_wv;  // [m, r], [r, m]
  Tensor<T> a_up, b_up;  // [m, r], [r, ratio*m]
  Tensor<T> conv_a;      // [m, rc]
  Tensor<T> conv_c;      // [k, rc]
  Tensor<T> conv_d;      // [k, rc]
  Tensor<T> core;        // [rc, rc, rc], only when trainable
};

template <typename T>
struct IncrementalWeights {
  int rank = 0, conv_rank = 0;
  bool has_core = false;
  std::vector<BlockAdapters<T>> blocks;

  static IncrementalWeights zeros(const ModelConfig& mcfg, const AdapterConfig& acfg) {
    acfg.validate();
    if (acfg.conv_rank > mcfg.kernel)
      throw ConfigError("conv rank exceeds the depth-wise kernel size");
    IncrementalWeights iw;
    iw.rank = acfg.rank;
    iw.conv_rank = acfg.conv_rank;
    iw.has_core = acfg.trainable_core;
    const int m = mcfg.dim, r = acfg.rank, rc = acfg.conv_rank, k = mcfg.kernel;
    const int up = mcfg.mlp_ratio * mcfg.dim;
    iw.blocks.resize(size_t(mcfg.depth));
    for (auto& b : iw.blocks) {
      b.a_wa = Tensor<T>({m, r});
      b.b_wa = Tensor<T>({r, m});
      b.a_wv = Tensor<T>({m, r});
      b.b_wv = Tensor<T>({r, m});
      b.a_up = Tensor<T>({m, r});
      b.b_up = Tensor<T>({r, up});
      b.conv_a = Tensor<T>({m, rc});
      b.conv_c = Tensor<T>({k, rc});
      b.conv_d = Tensor<T>({k, rc});
      if (iw.has_core) b.core = Tensor<T>({rc, rc, rc});
    }
    return iw;
  }

  /// Training start point: the product factors (B, conv_d) stay zero so the
  /// initial delta vanishes; their partners start as small normals so every
  /// factor receives gradient from the first step. A trainable core starts
  /// at the superdiagonal identity.
  static IncrementalWeights init(const ModelConfig& mcfg, const AdapterConfig& acfg,
                                 uint64_t seed) {
    IncrementalWeights iw = zeros(mcfg, acfg);
    Rng rng(seed);
    auto fill = [&](Tensor<T>& t) {
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal() * 0.02);
    };
    for (auto& b : iw.blocks) {
      fill(b.a_wa);
      fill(b.a_wv);
      fill(b.a_up);
      fill(b.conv_a);
      fill(b.conv_c);
      if (iw.has_core)
        for (int t = 0; t < iw.conv_rank; ++t) b.core(t, t, t) = T(1);
    }
    return iw;
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (auto& b : blocks) {
      fn(b.a_wa);
      fn(b.b_wa);
      fn(b.a_wv);
      fn(b.b_wv);
      fn(b.a_up);
      fn(b.b_up);
      fn(b.conv_a);
      fn(b.conv_c);
      fn(b.conv_d);
      if (has_core) fn(b.core);
    }
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<IncrementalWeights*>(this)->for_each_tensor(
        [&](Tensor<T>& t) { fn(const_cast<const Tensor<T>&>(t)); });
  }

  int64_t count() const {
    int64_t n = 0;
    for_each_tensor([&](const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  void set_zero() {
    for_each_tensor([](Tensor<T>& t) { t.set_zero(); });
  }
};

// ---------------------------------------------------------------------------
// Deltas and merging.
// ---------------------------------------------------------------------------

/// dW = A * B for a linear layer.
template <typename T>
Tensor<T> lora_delta(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> d({a.dim(0), b.dim(1)});
  d.mat().noalias() = a.mat() * b.mat();
  return d;
}

/// Accumulates dA += g * B^T, dB += A^T * g for g = dL/dW'.
template <typename T>
void lora_grad(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& g, Tensor<T>& da,
               Tensor<T>& db) {
  da.mat().noalias() += g.mat() * b.mat().transpose();
  db.mat().noalias() += a.mat().transpose() * g.mat();
}

/// Factored depthwise delta [m, 1, k, k]. With a core:
/// dW[o,p,q] = sum_{t1,t2,t3} core[t1,t2,t3] A[o,t1] C[p,t2] D[q,t3];
/// without, core is the fixed superdiagonal identity (the sum collapses to
/// a single index).
template <typename T>
Tensor<T> conv_delta(const BlockAdapters<T>& ba, bool has_core) {
  const int m = ba.conv_a.dim(0), rc = ba.conv_a.dim(1), k = ba.conv_c.dim(0);
  Tensor<T> d({m, 1, k, k});
  // mix[t1][p*k+q] = sum_{t2,t3} core[t1,t2,t3] C[p,t2] D[q,t3]
  std::vector<T> mix(size_t(rc) * k * k, T(0));
  for (int t1 = 0; t1 < rc; ++t1)
    for (int p = 0; p < k; ++p)
      for (int q = 0; q < k; ++q) {
        T acc = T(0);
        if (has_core) {
          for (int t2 = 0; t2 < rc; ++t2)
            for (int t3 = 0; t3 < rc; ++t3)
              acc += ba.core(t1, t2, t3) * ba.conv_c(p, t2) * ba.conv_d(q, t3);
        } else {
          acc = ba.conv_c(p, t1) * ba.conv_d(q, t1);
        }
        mix[(size_t(t1) * k + size_t(p)) * k + size_t(q)] = acc;
      }
  for (int o = 0; o < m; ++o)
    for (int p = 0; p < k; ++p)
      for (int q = 0; q < k; ++q) {
        T acc = T(0);
        for (int t1 = 0; t1 < rc; ++t1)
          acc += ba.conv_a(o, t1) * mix[(size_t(t1) * k + size_t(p)) * k + size_t(q)];
        d(o, 0, p, q) = acc;
      }
  return d;
}

/// Accumulates factor gradients for g = dL/d(dW) (masked taps already zero).
template <typename T>
void conv_delta_grad(const BlockAdapters<T>& ba, bool has_core, const Tensor<T>& g,
                     BlockAdapters<T>& out) {
  const int m = ba.conv_a.dim(0), rc = ba.conv_a.dim(1), k = ba.conv_c.dim(0);
  for (int o = 0; o < m; ++o)
    for (int p = 0; p < k; ++p)
      for (int q = 0; q < k; ++q) {
        const T gv = g(o, 0, p, q);
        if (gv == T(0)) continue;
        if (has_core) {
          for (int t1 = 0; t1 < rc; ++t1)
            for (int t2 = 0; t2 < rc; ++t2)
              for (int t3 = 0; t3 < rc; ++t3) {
                const T core = ba.core(t1, t2, t3);
                const T a = ba.conv_a(o, t1), c = ba.conv_c(p, t2), dq = ba.conv_d(q, t3);
                out.conv_a(o, t1) += gv * core * c * dq;
                out.conv_c(p, t2) += gv * core * a * dq;
                out.conv_d(q, t3) += gv * core * a * c;
                out.core(t1, t2, t3) += gv * a * c * dq;
              }
        } else {
          for (int t = 0; t < rc; ++t) {
            const T a = ba.conv_a(o, t), c = ba.conv_c(p, t), dq = ba.conv_d(q, t);
            out.conv_a(o, t) += gv * c * dq;
            out.conv_c(p, t) += gv * a * dq;
            out.conv_d(q, t) += gv * a * c;
          }
        }
      }
}

/// Base weights plus deltas; the depthwise kernel is re-masked so merged
/// kernels carry zeros at every non-causal tap.
template <typename T>
ModelParams<T> merge_adapters(const ModelParams<T>& base, const IncrementalWeights<T>& iw) {
  if (int(iw.blocks.size()) != base.cfg.depth) throw ConfigError("merge: depth mismatch");
  ModelParams<T> out = base;
  const Mask ma = build_mask(base.cfg.kernel, MaskType::kA);
  const int k = base.cfg.kernel, h = k / 2;
  for (size_t b = 0; b < iw.blocks.size(); ++b) {
    const auto& ad = iw.blocks[b];
    auto& ob = out.blocks[b];
    ob.wa.mat().noalias() += ad.a_wa.mat() * ad.b_wa.mat();
    ob.wv.mat().noalias() += ad.a_wv.mat() * ad.b_wv.mat();
    ob.wup.mat().noalias() += ad.a_up.mat() * ad.b_up.mat();
    Tensor<T> d = conv_delta(ad, iw.has_core);
    for (int c = 0; c < base.cfg.dim; ++c)
      for (int p = 0; p < k; ++p)
        for (int q = 0; q < k; ++q)
          ob.dw(c, 0, p, q) =
              ma.allowed(p - h, q - h) ? ob.dw(c, 0, p, q) + d(c, 0, p, q) : T(0);
  }
  return out;
}

/// Reference composition: runs the forward with explicit (W, A, B) pairs,
/// never materialising merged weights. Anchors the merge-equivalence oracle.
template <typename T>
Tensor<T> mgcf_forward_composed(const Tensor<T>& xnorm, const ModelParams<T>& p,
                                const IncrementalWeights<T>& iw) {
  const Mask mb = build_mask(3, MaskType::kB);
  const Mask ma = build_mask(p.cfg.kernel, MaskType::kA);
  auto affine2 = [](const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                    const Tensor<T>& a, const Tensor<T>& b2) {
    Tensor<T> y = affine_forward(x, w, bias);
    Shape mid_shape = x.shape();
    mid_shape.back() = a.dim(1);
    Tensor<T> mid(mid_shape);
    mid.mat().noalias() = x.mat() * a.mat();
    y.mat().noalias() += mid.mat() * b2.mat();
    return y;
  };
  Tensor<T> x = masked_conv2d_forward(xnorm, p.embed, mb);
  for (int bi = 0; bi < p.cfg.depth; ++bi) {
    const auto& b = p.blocks[size_t(bi)];
    const auto& ad = iw.blocks[size_t(bi)];
    Tensor<T> n1 = layer_norm_forward(x, b.ln1_g, b.ln1_b);
    Tensor<T> a_in = affine2(n1, b.wa, b.ba, ad.a_wa, ad.b_wa);
    Tensor<T> a_m = masked_dwconv_forward(a_in, b.dw, ma);
    Tensor<T> dk = conv_delta(ad, iw.has_core);
    Tensor<T> a_m2 = masked_dwconv_forward(a_in, dk, ma);
    a_m.vec() += a_m2.vec();
    Tensor<T> gate = activation_forward(a_m, Act::kSwish);
    Tensor<T> v = affine2(n1, b.wv, b.bv, ad.a_wv, ad.b_wv);
    x.vec().array() += gate.vec().array() * v.vec().array();
    Tensor<T> n2 = layer_norm_forward(x, b.ln2_g, b.ln2_b);
    Tensor<T> up = affine2(n2, b.wup, b.bup, ad.a_up, ad.b_up);
    Tensor<T> hact = activation_forward(up, Act::kGelu);
    x.vec() += affine_forward(hact, b.wdown, b.bdown).vec();
  }
  return affine_forward(x, p.head_w, p.head_b);
}

// ---------------------------------------------------------------------------
// Quantisation.
// ---------------------------------------------------------------------------

/// Nearest bin, halves away from zero, clamped to +/- k_max.
template <typename T>
int32_t quantize_bin(T phi, const AdapterConfig& acfg) {
  long long k = std::llround(double(phi) / acfg.step);
  return int32_t(std::clamp<long long>(k, -acfg.k_max, acfg.k_max));
}

template <typename T>
T dequantize_bin(int32_t k, const AdapterConfig& acfg) {
  return T(double(k) * acfg.step);
}

/// Straight-through value: quantised forward, identity backward (callers
/// route gradients straight to the underlying parameter).
template <typename T>
T ste_value(T phi, const AdapterConfig& acfg) {
  return dequantize_bin<T>(quantize_bin(phi, acfg), acfg);
}

template <typename T>
IncrementalWeights<T> ste_apply(const IncrementalWeights<T>& iw, const AdapterConfig& acfg) {
  IncrementalWeights<T> out = iw;
  out.for_each_tensor([&](Tensor<T>& t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = ste_value(t[i], acfg);
  });
  return out;
}

template <typename T>
std::vector<int32_t> quantize_weights(const IncrementalWeights<T>& iw,
                                      const AdapterConfig& acfg) {
  std::vector<int32_t> out;
  out.reserve(size_t(iw.count()));
  iw.for_each_tensor([&](const Tensor<T>& t) {
    for (int64_t i = 0; i < t.numel(); ++i) out.push_back(quantize_bin(t[i], acfg));
  });
  return out;
}

template <typename T>
IncrementalWeights<T> weights_from_bins(const ModelConfig& mcfg, const AdapterConfig& acfg,
                                        const std::vector<int32_t>& bins) {
  IncrementalWeights<T> iw = IncrementalWeights<T>::zeros(mcfg, acfg);
  if (int64_t(bins.size()) != iw.count())
    throw FormatError("weight stream length does not match the adapter configuration");
  size_t i = 0;
  iw.for_each_tensor([&](Tensor<T>& t) {
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = dequantize_bin<T>(bins[i++], acfg);
  });
  return iw;
}

// ---------------------------------------------------------------------------
// Schedule and patch ranking.
// ---------------------------------------------------------------------------

/// Fraction of patches trained at step t: floor plus a smoothstep ramp that
/// saturates at t >= T*(1 - tail), raised to the configured exponent.
inline double schedule_ratio(double t, double steps, double floor_frac, double tail_frac,
                             double exponent) {
  if (!(steps >= 1)) throw ConfigError("schedule needs steps >= 1");
  if (!(floor_frac > 0 && floor_frac <= 1) || !(tail_frac >= 0 && tail_frac < 1) ||
      !(exponent > 0))
    throw ConfigError("schedule parameters out of range");
  double x = t / (steps * (1.0 - tail_frac));
  x = std::clamp(x, 0.0, 1.0);
  double s = x * x * (3.0 - 2.0 * x);
  return floor_frac + (1.0 - floor_frac) * std::pow(s, exponent);
}

/// Patch indices ordered by descending base bits-per-subpixel, ties toward
/// the lower index. Optionally reports each patch's base bits.
template <typename T>
std::vector<int> rank_patches(const std::vector<Image8>& patches, const ModelParams<T>& p,
                              std::vector<double>* bits_out, int threads) {
  const int n = int(patches.size());
  std::vector<double> bits(static_cast<size_t>(n));
  parallel_for(n, threads, [&](int64_t i) {
    bits[size_t(i)] = patch_nll(patches[size_t(i)], p);
  });
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    double ba = bits[size_t(a)] / double(patches[size_t(a)].subpixels());
    double bb = bits[size_t(b)] / double(patches[size_t(b)].subpixels());
    return ba > bb;
  });
  if (bits_out) *bits_out = std::move(bits);
  return order;
}

// ---------------------------------------------------------------------------
// MDL objective.
// ---------------------------------------------------------------------------

struct MdlParts {
  double weight_bits = 0;
  double pixel_bits = 0;
  double total() const { return weight_bits + pixel_bits; }
};

namespace detail {

/// Surrogate code length of one weight under the logistic prior after
/// dithering: -log2(step * pdf(x)). Gradient: (2 sigmoid(x/s) - 1) / (s ln 2).
inline double weight_surrogate_bits(double x, const AdapterConfig& acfg, double* grad) {
  const double s = acfg.prior_scale;
  const double t = std::abs(x) / s;
  // -log2(step * pdf) = log2(s) - log2(step) + (t + 2 log(1 + e^-t)) / ln 2.
  // Keeping the scale and step terms in the same log lets them cancel bit
  // for bit when step == scale, making the cost at zero exactly 2 bits.
  if (grad) *grad = (2.0 * sigmoid_d(x / s) - 1.0) / (s * kLn2);
  return std::log2(s / acfg.step) + (t + 2.0 * std::log1p(std::exp(-t))) / kLn2;
}

}  // namespace detail

/// One evaluation of the description-length objective on the selected
/// patches. The network term sees straight-through quantised weights (or the
/// raw weights when `quantize_network` is false, which is what finite
/// differences can probe); the weight term sees the dithered weights, with
/// fresh noise drawn from `noise_rng` per call (`dither` false pins the
/// noise to zero, again for finite differences). Gradients accumulate into
/// `grads` when given.
template <typename T>
MdlParts mdl_loss(const std::vector<Image8>& patches, const std::vector<int>& selected,
                  const ModelParams<T>& base, const IncrementalWeights<T>& phi,
                  const AdapterConfig& acfg, Rng& noise_rng, IncrementalWeights<T>* grads,
                  bool quantize_network = true, int threads = 1, bool dither = true) {
  MdlParts parts;

  // Weight term on dithered weights, walking phi and grads in lockstep.
  {
    std::vector<Tensor<T>*> pt, gt;
    const_cast<IncrementalWeights<T>&>(phi).for_each_tensor(
        [&](Tensor<T>& t) { pt.push_back(&t); });
    if (grads) grads->for_each_tensor([&](Tensor<T>& t) { gt.push_back(&t); });
    for (size_t ti = 0; ti < pt.size(); ++ti) {
      Tensor<T>& t = *pt[ti];
      for (int64_t i = 0; i < t.numel(); ++i) {
        double noise = dither ? (noise_rng.uniform() - 0.5) * acfg.step : 0.0;
        double g = 0;
        parts.weight_bits +=
            detail::weight_surrogate_bits(double(t[i]) + noise, acfg, grads ? &g : nullptr);
        if (grads) (*gt[ti])[i] += T(g);
      }
    }
  }

  // Network term under (straight-through quantised) merged weights.
  IncrementalWeights<T> eff = quantize_network ? ste_apply(phi, acfg) : phi;
  ModelParams<T> merged = merge_adapters(base, eff);
  if (!grads) {
    std::vector<double> bits(selected.size());
    parallel_for(int64_t(selected.size()), threads, [&](int64_t i) {
      bits[size_t(i)] = patch_nll(patches[size_t(selected[size_t(i)])], merged);
    });
    for (double b : bits) parts.pixel_bits += b;
    return parts;
  }

  // Gradients: per-patch parameter grads reduced in ascending selection
  // order, then chained onto the factors at the straight-through point.
  ModelParams<T> gm = ModelParams<T>::zeros(base.cfg);
  const int chunk = std::max(1, threads);
  for (size_t s0 = 0; s0 < selected.size(); s0 += size_t(chunk)) {
    const size_t s1 = std::min(selected.size(), s0 + size_t(chunk));
    std::vector<ModelParams<T>> part(s1 - s0);
    std::vector<double> bits(s1 - s0);
    parallel_for(int64_t(s1 - s0), threads, [&](int64_t i) {
      part[size_t(i)] = ModelParams<T>::zeros(base.cfg);
      bits[size_t(i)] =
          patch_nll(patches[size_t(selected[s0 + size_t(i)])], merged, &part[size_t(i)]);
    });
    for (size_t i = 0; i < part.size(); ++i) {
      parts.pixel_bits += bits[i];
      std::vector<const Tensor<T>*> src;
      part[i].for_each_tensor([&](const Tensor<T>& t, const std::string&) { src.push_back(&t); });
      size_t j = 0;
      gm.for_each_tensor([&](Tensor<T>& t, const std::string&) {
        t.vec() += src[j++]->vec();
      });
    }
  }
  for (size_t b = 0; b < eff.blocks.size(); ++b) {
    const auto& ad = eff.blocks[b];
    auto& gb = grads->blocks[b];
    lora_grad(ad.a_wa, ad.b_wa, gm.blocks[b].wa, gb.a_wa, gb.b_wa);
    lora_grad(ad.a_wv, ad.b_wv, gm.blocks[b].wv, gb.a_wv, gb.b_wv);
    lora_grad(ad.a_up, ad.b_up, gm.blocks[b].wup, gb.a_up, gb.b_up);
    conv_delta_grad(ad, eff.has_core, gm.blocks[b].dw, gb);
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Rate-prioritised progressive fine-tuning.
// ---------------------------------------------------------------------------

struct AdaptReportRow {
  int step = 0;
  int selected = 0;
  double weight_bits = 0, pixel_bits = 0, total = 0;
};

struct AdaptOutcome {
  std::vector<int32_t> phi_int;
  std::vector<AdaptReportRow> report;
  double base_pixel_bits = 0;      // whole image, unadapted
  double final_pixel_bits = 0;     // whole image, merged quantised weights
  double final_weight_bits = 0;    // ideal prior code length of phi_int
  int64_t grad_patch_evals = 0;
};

/// Adapts the increments to one image. Patches are ranked once by base rate;
/// each step trains on the top ceil(F(t) * n) of that fixed order under the
/// MDL objective, then the weights are quantised for transmission. Zero
/// steps short-circuits to an all-zero delta.
template <typename T>
AdaptOutcome rpft_finetune(const Image8& img, const ModelParams<T>& base, int patch,
                           const AdapterConfig& acfg, int threads = 1) {
  acfg.validate();
  auto rects = tile_rects(img.width, img.height, patch);
  std::vector<Image8> patches;
  patches.reserve(rects.size());
  for (const auto& r : rects) patches.push_back(crop_image(img, r.x0, r.y0, r.w, r.h));

  AdaptOutcome out;
  std::vector<double> base_bits;
  std::vector<int> order = rank_patches(patches, base, &base_bits, threads);
  for (double b : base_bits) out.base_pixel_bits += b;

  IncrementalWeights<T> phi = acfg.steps == 0
                                  ? IncrementalWeights<T>::zeros(base.cfg, acfg)
                                  : IncrementalWeights<T>::init(base.cfg, acfg, acfg.seed);
  IncrementalWeights<T> grads = IncrementalWeights<T>::zeros(base.cfg, acfg);
  std::vector<AdamState<T>> adam;
  phi.for_each_tensor([&](Tensor<T>& t) { adam.emplace_back(t.shape()); });
  Rng noise_rng(acfg.seed ^ 0x7f4a7c15ull);

  const int n = int(patches.size());
  for (int t = 0; t < acfg.steps; ++t) {
    double frac = schedule_ratio(double(t), double(acfg.steps), acfg.floor_frac, acfg.tail_frac,
                                 acfg.exponent);
    int n_sel = std::min<int>(n, int(std::ceil(frac * n)));
    n_sel = std::max(n_sel, 1);
    std::vector<int> selected(order.begin(), order.begin() + n_sel);
    grads.set_zero();
    MdlParts parts = mdl_loss(patches, selected, base, phi, acfg, noise_rng, &grads, true, threads);
    out.grad_patch_evals += n_sel;
    size_t ti = 0;
    std::vector<Tensor<T>*> gt;
    grads.for_each_tensor([&](Tensor<T>& g) { gt.push_back(&g); });
    phi.for_each_tensor([&](Tensor<T>& p) {
      adam_step(p, *gt[ti], adam[ti], acfg.lr);
      ti++;
    });
    out.report.push_back({t, n_sel, parts.weight_bits, parts.pixel_bits, parts.total()});
  }

  out.phi_int = quantize_weights(phi, acfg);
  WeightPrior prior = acfg.prior();
  for (int32_t k : out.phi_int) out.final_weight_bits += prior.bits(k);
  IncrementalWeights<T> quant = weights_from_bins<T>(base.cfg, acfg, out.phi_int);
  ModelParams<T> merged = merge_adapters(base, quant);
  std::vector<double> fin(patches.size());
  parallel_for(int64_t(patches.size()), threads, [&](int64_t i) {
    fin[size_t(i)] = patch_nll(patches[size_t(i)], merged);
  });
  for (double b : fin) out.final_pixel_bits += b;
  return out;
}

}  // namespace callic
