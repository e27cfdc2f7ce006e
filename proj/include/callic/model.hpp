// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "callic/ops.hpp"

namespace callic {

/// Architecture of the masked gated convolutional model. The embedding is a
/// fixed 3x3 strictly-causal convolution; every block is a gated conv unit
/// followed by a pointwise MLP, both with pre-layer-norm and residual
/// connections; a 1x1 head emits the mixture parameters.
struct ModelConfig {
  int depth = 3;
  int dim = 128;
  int kernel = 7;     // depthwise gate kernel extent
  int mixtures = 5;   // logistic mixture components per channel
  int mlp_ratio = 4;
  int channels = 3;   // 1 (grey) or 3 (RGB)

  int head_channels() const {
    // RGB: K logits + 3K means + 3K log-scales + 3K coupling coefficients.
    // Grey: K logits + K means + K log-scales.
    return channels == 3 ? 10 * mixtures : 3 * mixtures;
  }

  void validate() const {
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd and >= 1");
    if (mixtures < 1) throw ConfigError("mixtures must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  }

  int64_t param_count() const {
    int64_t m = dim, k = kernel, up = int64_t(mlp_ratio) * dim;
    int64_t block = 2 * m            // norm 1
                    + m * m + m      // gate input projection
                    + m * m + m      // value projection
                    + m * k * k      // depthwise kernel
                    + 2 * m          // norm 2
                    + m * up + up    // MLP up
                    + up * m + m;    // MLP down
    return int64_t(dim) * channels * 9 + int64_t(depth) * block +
           int64_t(dim) * head_channels() + head_channels();
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wa, ba;  // gate input projection
  Tensor<T> wv, bv;  // value projection
  Tensor<T> dw;      // depthwise kernel [m, 1, k, k]
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> wup, bup, wdown, bdown;
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  Tensor<T> embed;  // [m, channels, 3, 3]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> head_w, head_b;

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    const int m = cfg.dim, k = cfg.kernel, up = cfg.mlp_ratio * cfg.dim;
    p.embed = Tensor<T>({m, cfg.channels, 3, 3});
    p.blocks.resize(size_t(cfg.depth));
    for (auto& b : p.blocks) {
      b.ln1_g = Tensor<T>({m});
      b.ln1_b = Tensor<T>({m});
      b.wa = Tensor<T>({m, m});
      b.ba = Tensor<T>({m});
      b.wv = Tensor<T>({m, m});
      b.bv = Tensor<T>({m});
      b.dw = Tensor<T>({m, 1, k, k});
      b.ln2_g = Tensor<T>({m});
      b.ln2_b = Tensor<T>({m});
      b.wup = Tensor<T>({m, up});
      b.bup = Tensor<T>({up});
      b.wdown = Tensor<T>({up, m});
      b.bdown = Tensor<T>({m});
    }
    p.head_w = Tensor<T>({m, cfg.head_channels()});
    p.head_b = Tensor<T>({cfg.head_channels()});
    return p;
  }

  /// Pretraining initialisation: fan-in scaled normals for the projections,
  /// unit norms, zero head (so the initial prediction is the same flat
  /// mixture at every position).
  static ModelParams init(const ModelConfig& cfg, uint64_t seed) {
    ModelParams p = zeros(cfg);
    Rng rng(seed);
    const int m = cfg.dim;
    const double embed_fan = double(cfg.channels) * build_mask(3, MaskType::kB).count();
    fill_normal(p.embed, std::sqrt(1.0 / embed_fan), rng);
    const Mask gate_mask = build_mask(cfg.kernel, MaskType::kA);
    const double dw_fan = gate_mask.count();
    for (auto& b : p.blocks) {
      b.ln1_g.fill(T(1));
      b.ln2_g.fill(T(1));
      fill_normal(b.wa, std::sqrt(1.0 / m), rng);
      fill_normal(b.wv, std::sqrt(1.0 / m), rng);
      fill_normal(b.dw, std::sqrt(1.0 / dw_fan), rng);
      // Masked-out taps stay zero for life: the forward never reads them,
      // gradients never touch them, and merges re-mask, so a zero increment
      // merge reproduces the kernel bit for bit.
      const int h = cfg.kernel / 2;
      for (int c = 0; c < m; ++c)
        for (int di = -h; di <= h; ++di)
          for (int dj = -h; dj <= h; ++dj)
            if (!gate_mask.allowed(di, dj)) b.dw(c, 0, di + h, dj + h) = T(0);
      fill_normal(b.wup, std::sqrt(1.0 / m), rng);
      fill_normal(b.wdown, std::sqrt(1.0 / (double(cfg.mlp_ratio) * m)), rng);
    }
    return p;
  }

  int64_t param_count() const {
    int64_t n = 0;
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const Tensor<T>& t, const std::string&) { n += t.numel(); });
    return n;
  }

  /// Visits every parameter tensor in the fixed serialisation order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(embed, std::string("embed"));
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      std::string pre = "block" + std::to_string(i) + ".";
      fn(b.ln1_g, pre + "ln1_g");
      fn(b.ln1_b, pre + "ln1_b");
      fn(b.wa, pre + "wa");
      fn(b.ba, pre + "ba");
      fn(b.wv, pre + "wv");
      fn(b.bv, pre + "bv");
      fn(b.dw, pre + "dw");
      fn(b.ln2_g, pre + "ln2_g");
      fn(b.ln2_b, pre + "ln2_b");
      fn(b.wup, pre + "wup");
      fn(b.bup, pre + "bup");
      fn(b.wdown, pre + "wdown");
      fn(b.bdown, pre + "bdown");
    }
    fn(head_w, std::string("head_w"));
    fn(head_b, std::string("head_b"));
  }

 private:
  static void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal() * stddev);
  }
};

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = ModelParams<To>::zeros(p.cfg);
  auto& src = const_cast<ModelParams<From>&>(p);
  std::vector<const Tensor<From>*> in;
  src.for_each_tensor([&](const Tensor<From>& t, const std::string&) { in.push_back(&t); });
  size_t i = 0;
  out.for_each_tensor([&](Tensor<To>& t, const std::string&) {
    t = cast_tensor<To>(*in[i++]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------

template <typename T>
struct BlockTrace {
  Tensor<T> x0, n1, a_in, a_m, gate, v, x1, n2, up, hact;
  LayerNormStats<T> s1, s2;
};

template <typename T>
struct MgcfTrace {
  Tensor<T> xnorm;
  std::vector<BlockTrace<T>> blocks;
  Tensor<T> feat;
};

namespace detail {
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  out.vec().array() = a.vec().array() * b.vec().array();
  return out;
}
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  out.vec().array() = a.vec().array() + b.vec().array();
  return out;
}
}  // namespace detail

/// Full-map forward over a normalised patch [H, W, channels]; returns the
/// raw head output [H, W, head_channels]. Aborts with NumericFault if any
/// stage produces a non-finite value.
template <typename T>
Tensor<T> mgcf_forward(const Tensor<T>& xnorm, const ModelParams<T>& p,
                       MgcfTrace<T>* trace = nullptr) {
  if (xnorm.ndim() != 3 || xnorm.dim(2) != p.cfg.channels)
    throw ConfigError("mgcf_forward: bad input shape");
  const Mask mb = build_mask(3, MaskType::kB);
  const Mask ma = build_mask(p.cfg.kernel, MaskType::kA);
  if (trace) {
    trace->xnorm = xnorm;
    trace->blocks.assign(size_t(p.cfg.depth), BlockTrace<T>{});
  }
  Tensor<T> x = masked_conv2d_forward(xnorm, p.embed, mb);
  check_finite(x, "embedding");
  for (int bi = 0; bi < p.cfg.depth; ++bi) {
    const auto& b = p.blocks[size_t(bi)];
    BlockTrace<T> t;
    t.x0 = std::move(x);
    t.n1 = layer_norm_forward(t.x0, b.ln1_g, b.ln1_b, &t.s1);
    t.a_in = affine_forward(t.n1, b.wa, b.ba);
    t.a_m = masked_dwconv_forward(t.a_in, b.dw, ma);
    t.gate = activation_forward(t.a_m, Act::kSwish);
    t.v = affine_forward(t.n1, b.wv, b.bv);
    t.x1 = detail::add(t.x0, detail::hadamard(t.gate, t.v));
    t.n2 = layer_norm_forward(t.x1, b.ln2_g, b.ln2_b, &t.s2);
    t.up = affine_forward(t.n2, b.wup, b.bup);
    t.hact = activation_forward(t.up, Act::kGelu);
    x = detail::add(t.x1, affine_forward(t.hact, b.wdown, b.bdown));
    check_finite(x, "block output");
    if (trace) trace->blocks[size_t(bi)] = std::move(t);
  }
  Tensor<T> raw = affine_forward(x, p.head_w, p.head_b);
  check_finite(raw, "head output");
  if (trace) trace->feat = std::move(x);
  return raw;
}

/// Accumulates parameter gradients into `g` (same layout as the params).
template <typename T>
void mgcf_backward(const MgcfTrace<T>& tr, const ModelParams<T>& p, const Tensor<T>& d_raw,
                   ModelParams<T>& g) {
  const Mask mb = build_mask(3, MaskType::kB);
  const Mask ma = build_mask(p.cfg.kernel, MaskType::kA);
  Tensor<T> dx = affine_backward(tr.feat, p.head_w, d_raw, &g.head_w, &g.head_b);
  for (int bi = p.cfg.depth - 1; bi >= 0; --bi) {
    const auto& b = p.blocks[size_t(bi)];
    auto& gb = g.blocks[size_t(bi)];
    const auto& t = tr.blocks[size_t(bi)];
    // x_out = x1 + down(gelu(up(n2)))
    Tensor<T> d_hact = affine_backward(t.hact, b.wdown, dx, &gb.wdown, &gb.bdown);
    Tensor<T> d_up = activation_backward(t.up, d_hact, Act::kGelu);
    Tensor<T> d_n2 = affine_backward(t.n2, b.wup, d_up, &gb.wup, &gb.bup);
    Tensor<T> d_x1 = layer_norm_backward(t.x1, b.ln2_g, t.s2, d_n2, &gb.ln2_g, &gb.ln2_b);
    d_x1.vec() += dx.vec();
    // x1 = x0 + swish(a_m) .* v
    Tensor<T> d_gate = detail::hadamard(d_x1, t.v);
    Tensor<T> d_v = detail::hadamard(d_x1, t.gate);
    Tensor<T> d_n1 = affine_backward(t.n1, b.wv, d_v, &gb.wv, &gb.bv);
    Tensor<T> d_am = activation_backward(t.a_m, d_gate, Act::kSwish);
    Tensor<T> d_ain = masked_dwconv_backward(t.a_in, b.dw, ma, d_am, &gb.dw);
    d_n1.vec() += affine_backward(t.n1, b.wa, d_ain, &gb.wa, &gb.ba).vec();
    Tensor<T> d_x0 = layer_norm_backward(t.x0, b.ln1_g, t.s1, d_n1, &gb.ln1_g, &gb.ln1_b);
    d_x0.vec() += d_x1.vec();
    dx = std::move(d_x0);
  }
  masked_conv2d_backward(tr.xnorm, p.embed, mb, dx, &g.embed);
}

}  // namespace callic
