// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "callic/image.hpp"
#include "callic/mixture.hpp"
#include "callic/rc.hpp"

namespace callic {

// ---------------------------------------------------------------------------
// Wavefront scan. Position (i, j) belongs to group 2i + j; groups are coded
// in order and an H x W patch takes 2H + W - 2 of them (some may be empty
// when W < 2). Within a group positions are ordered by ascending row.
// ---------------------------------------------------------------------------

struct ScanOrder {
  int H = 0, W = 0;

  ScanOrder(int h, int w) : H(h), W(w) {
    if (h < 1 || w < 1) throw ConfigError("scan order needs positive extents");
  }
  int groups() const { return 2 * H + W - 2; }

  std::vector<std::pair<int, int>> positions(int g) const {
    std::vector<std::pair<int, int>> out;
    int lo = g - (W - 1);
    int i0 = lo <= 0 ? 0 : (lo + 1) / 2;
    int i1 = std::min(H - 1, g / 2);
    for (int i = i0; i <= i1; ++i) out.emplace_back(i, g - 2 * i);
    return out;
  }
};

struct PatchRect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
};

/// Row-major tiling; border tiles keep their true remainder extents.
inline std::vector<PatchRect> tile_rects(int width, int height, int patch) {
  if (patch < 1) throw ConfigError("patch extent must be positive");
  std::vector<PatchRect> out;
  for (int y = 0; y < height; y += patch)
    for (int x = 0; x < width; x += patch)
      out.push_back({x, y, std::min(patch, width - x), std::min(patch, height - y)});
  return out;
}

// ---------------------------------------------------------------------------
// Cache-then-crop incremental inference.
//
// Two kinds of buffer persist across steps: the normalised pixel map that
// feeds the strictly-causal embedding, and one gate-input map per block
// that feeds its depthwise convolution. Step g first publishes the pixels
// coded in group g-1, then evaluates the network only at group g's
// positions, publishing each block's gate-input rows before that block's
// windowed convolution reads them (the type-A mask may reach same-group
// positions). Encoder and decoder drive the identical code path, so the
// mixture parameters they derive are bitwise equal.
// ---------------------------------------------------------------------------

template <typename T>
struct CacheState {
  int H = 0, W = 0;
  const ModelParams<T>* params = nullptr;
  Mask mask_b, mask_a;
  ScanOrder scan;
  Tensor<T> pixel_buf;                         // [H, W, channels]
  std::vector<Tensor<T>> block_buf;            // per block [H, W, m]
  std::vector<uint8_t> pixel_written;          // H * W
  std::vector<std::vector<uint8_t>> block_written;
  std::vector<MatX<T>> embed_off;              // per B offset: [channels, m]
  std::vector<MatX<T>> dw_off;                 // per block: [offsets, m]
  int next_group = 0;
  int64_t macs = 0;

  CacheState(int h, int w, const ModelParams<T>& p)
      : H(h),
        W(w),
        params(&p),
        mask_b(build_mask(3, MaskType::kB)),
        mask_a(build_mask(p.cfg.kernel, MaskType::kA)),
        scan(h, w),
        pixel_buf({h, w, p.cfg.channels}),
        pixel_written(size_t(h) * w, 0) {
    const int m = p.cfg.dim, cin = p.cfg.channels;
    block_buf.reserve(size_t(p.cfg.depth));
    block_written.assign(size_t(p.cfg.depth), std::vector<uint8_t>(size_t(h) * w, 0));
    for (int b = 0; b < p.cfg.depth; ++b) block_buf.emplace_back(Shape{h, w, m});
    const int hb = 1;  // embedding kernel is 3x3
    embed_off.resize(mask_b.offsets.size());
    for (size_t o = 0; o < mask_b.offsets.size(); ++o) {
      auto [di, dj] = mask_b.offsets[o];
      embed_off[o].resize(cin, m);
      for (int ic = 0; ic < cin; ++ic)
        for (int oc = 0; oc < m; ++oc) embed_off[o](ic, oc) = p.embed(oc, ic, di + hb, dj + hb);
    }
    const int ha = p.cfg.kernel / 2;
    dw_off.resize(size_t(p.cfg.depth));
    for (int b = 0; b < p.cfg.depth; ++b) {
      dw_off[size_t(b)].resize(Eigen::Index(mask_a.offsets.size()), m);
      for (size_t o = 0; o < mask_a.offsets.size(); ++o) {
        auto [di, dj] = mask_a.offsets[o];
        for (int c = 0; c < m; ++c)
          dw_off[size_t(b)](Eigen::Index(o), c) = p.blocks[size_t(b)].dw(c, 0, di + ha, dj + ha);
      }
    }
  }
};

/// Advances one wavefront group. `prev_pixels` holds group g-1's symbols in
/// scan order (interleaved channels; ignored at g = 0). Returns the raw
/// head rows [n_g, head_channels] for group g's positions (empty tensor for
/// an empty group).
template <typename T>
Tensor<T> cci_step(CacheState<T>& cache, int g, const uint8_t* prev_pixels) {
  if (g != cache.next_group || g >= cache.scan.groups())
    throw std::logic_error("cci_step called out of order");
  cache.next_group++;
  const ModelParams<T>& p = *cache.params;
  const int m = p.cfg.dim, cin = p.cfg.channels, W = cache.W;

  if (g > 0) {
    auto prev = cache.scan.positions(g - 1);
    for (size_t q = 0; q < prev.size(); ++q) {
      auto [i, j] = prev[q];
      for (int c = 0; c < cin; ++c)
        cache.pixel_buf(i, j, c) = pixel_norm<T>(prev_pixels[q * size_t(cin) + size_t(c)]);
      cache.pixel_written[size_t(i) * W + size_t(j)] = 1;
    }
  }

  const auto pos = cache.scan.positions(g);
  const int n = int(pos.size());
  if (n == 0) return Tensor<T>();

  using RowMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
  Tensor<T> x({n, m});
  for (int q = 0; q < n; ++q) {
    auto [i, j] = pos[size_t(q)];
    auto xrow = x.mat().row(q);
    for (size_t o = 0; o < cache.mask_b.offsets.size(); ++o) {
      auto [di, dj] = cache.mask_b.offsets[o];
      int ii = i + di, jj = j + dj;
      if (ii < 0 || ii >= cache.H || jj < 0 || jj >= W) continue;
      if (!cache.pixel_written[size_t(ii) * W + size_t(jj)])
        throw std::logic_error("pixel cache read before write");
      RowMap src(cache.pixel_buf.data() + (size_t(ii) * W + size_t(jj)) * cin, cin);
      xrow.noalias() += src * cache.embed_off[o];
      cache.macs += int64_t(cin) * m;
    }
  }

  for (int b = 0; b < p.cfg.depth; ++b) {
    const auto& bp = p.blocks[size_t(b)];
    Tensor<T> n1 = layer_norm_forward(x, bp.ln1_g, bp.ln1_b);
    Tensor<T> a_in = affine_forward(n1, bp.wa, bp.ba);
    cache.macs += int64_t(n) * m * m;
    // publish this group's gate inputs before any window reads them
    auto& buf = cache.block_buf[size_t(b)];
    auto& flags = cache.block_written[size_t(b)];
    for (int q = 0; q < n; ++q) {
      auto [i, j] = pos[size_t(q)];
      std::copy(a_in.data() + int64_t(q) * m, a_in.data() + int64_t(q + 1) * m,
                buf.data() + (size_t(i) * W + size_t(j)) * m);
      flags[size_t(i) * W + size_t(j)] = 1;
    }
    Tensor<T> a_m({n, m});
    for (int q = 0; q < n; ++q) {
      auto [i, j] = pos[size_t(q)];
      auto row = a_m.mat().row(q);
      for (size_t o = 0; o < cache.mask_a.offsets.size(); ++o) {
        auto [di, dj] = cache.mask_a.offsets[o];
        int ii = i + di, jj = j + dj;
        if (ii < 0 || ii >= cache.H || jj < 0 || jj >= W) continue;
        if (!flags[size_t(ii) * W + size_t(jj)])
          throw std::logic_error("gate cache read before write");
        RowMap src(buf.data() + (size_t(ii) * W + size_t(jj)) * m, m);
        row.array() += src.array() * cache.dw_off[size_t(b)].row(Eigen::Index(o)).array();
        cache.macs += m;
      }
    }
    Tensor<T> gate = activation_forward(a_m, Act::kSwish);
    Tensor<T> v = affine_forward(n1, bp.wv, bp.bv);
    cache.macs += int64_t(n) * m * m;
    x.vec().array() += gate.vec().array() * v.vec().array();
    Tensor<T> n2 = layer_norm_forward(x, bp.ln2_g, bp.ln2_b);
    Tensor<T> up = affine_forward(n2, bp.wup, bp.bup);
    Tensor<T> hact = activation_forward(up, Act::kGelu);
    Tensor<T> down = affine_forward(hact, bp.wdown, bp.bdown);
    cache.macs += 2 * int64_t(n) * m * p.cfg.mlp_ratio * m;
    x.vec().array() += down.vec().array();
  }
  Tensor<T> raw = affine_forward(x, p.head_w, p.head_b);
  cache.macs += int64_t(n) * m * p.cfg.head_channels();
  check_finite(raw, "incremental head output");
  return raw;
}

/// Exact multiply-accumulate count of one full-map forward (convolutions
/// truncated at the borders). The instrumented incremental path must land
/// on exactly this number for the same extents.
inline int64_t forward_macs(int h, int w, const ModelConfig& cfg) {
  const Mask mb = build_mask(3, MaskType::kB);
  const Mask ma = build_mask(cfg.kernel, MaskType::kA);
  auto conv_cells = [&](const Mask& m) {
    int64_t cells = 0;
    for (auto [di, dj] : m.offsets)
      cells += int64_t(std::max(0, h - std::abs(di))) * std::max(0, w - std::abs(dj));
    return cells;
  };
  const int64_t hw = int64_t(h) * w, m = cfg.dim, up = int64_t(cfg.mlp_ratio) * cfg.dim;
  int64_t per_block = 2 * hw * m * m + conv_cells(ma) * m + 2 * hw * m * up;
  return conv_cells(mb) * cfg.channels * m + cfg.depth * per_block +
         hw * m * cfg.head_channels();
}

/// MACs for coding every position of an image once (the incremental cost).
inline int64_t cci_image_macs(int width, int height, int patch, const ModelConfig& cfg) {
  int64_t total = 0;
  for (const auto& r : tile_rects(width, height, patch)) total += forward_macs(r.h, r.w, cfg);
  return total;
}

/// MACs for the reference coder that re-runs the full map once per group.
inline int64_t naive_image_macs(int width, int height, int patch, const ModelConfig& cfg) {
  int64_t total = 0;
  for (const auto& r : tile_rects(width, height, patch))
    total += int64_t(ScanOrder(r.h, r.w).groups()) * forward_macs(r.h, r.w, cfg);
  return total;
}

// ---------------------------------------------------------------------------
// Patch coding. Channels are coded R, G, B within a position so the
// coupling coefficients always condition on already-known channels.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void code_position(const T* raw_row, const uint8_t* px_inout, int channels,
                   const ModelConfig& cfg, RangeEncoder* enc, RangeDecoder* dec,
                   uint8_t* decoded) {
  std::vector<double> pmf(256);
  std::array<double, 2> prev{0.0, 0.0};
  for (int ch = 0; ch < channels; ++ch) {
    mixture_pmf(raw_row, ch, prev, cfg, pmf.data());
    QuantizedCDF cdf = quantize_cdf(pmf);
    int sym;
    if (enc) {
      sym = px_inout[ch];
      enc->encode(cdf, sym);
    } else {
      sym = dec->decode_symbol(cdf);
      decoded[ch] = uint8_t(sym);
    }
    if (ch < 2) prev[size_t(ch)] = pixel_norm_d(sym);
  }
}

}  // namespace detail

template <typename T>
Bytes encode_patch(const Image8& patch, const ModelParams<T>& p, int64_t* macs = nullptr) {
  if (patch.channels != p.cfg.channels) throw ConfigError("encode_patch: channel mismatch");
  CacheState<T> cache(patch.height, patch.width, p);
  RangeEncoder enc;
  const int C = patch.channels;
  std::vector<uint8_t> prev_px;
  for (int g = 0; g < cache.scan.groups(); ++g) {
    Tensor<T> raw = cci_step(cache, g, prev_px.data());
    auto pos = cache.scan.positions(g);
    std::vector<uint8_t> cur(pos.size() * size_t(C));
    for (size_t q = 0; q < pos.size(); ++q) {
      auto [i, j] = pos[q];
      for (int c = 0; c < C; ++c) cur[q * size_t(C) + size_t(c)] = patch.at(i, j, c);
      detail::code_position(raw.data() + int64_t(q) * p.cfg.head_channels(),
                            &cur[q * size_t(C)], C, p.cfg, &enc, nullptr, nullptr);
    }
    prev_px = std::move(cur);
  }
  if (macs) *macs = cache.macs;
  return enc.finish();
}

template <typename T>
Image8 decode_patch(const uint8_t* data, size_t size, int w, int h, int channels,
                    const ModelParams<T>& p) {
  if (channels != p.cfg.channels) throw ConfigError("decode_patch: channel mismatch");
  CacheState<T> cache(h, w, p);
  RangeDecoder dec(data, size);
  Image8 out(w, h, channels);
  std::vector<uint8_t> prev_px;
  for (int g = 0; g < cache.scan.groups(); ++g) {
    Tensor<T> raw = cci_step(cache, g, prev_px.data());
    auto pos = cache.scan.positions(g);
    std::vector<uint8_t> cur(pos.size() * size_t(channels));
    for (size_t q = 0; q < pos.size(); ++q) {
      auto [i, j] = pos[q];
      detail::code_position(raw.data() + int64_t(q) * p.cfg.head_channels(), nullptr, channels,
                            p.cfg, nullptr, &dec, &cur[q * size_t(channels)]);
      for (int c = 0; c < channels; ++c) out.at(i, j, c) = cur[q * size_t(channels) + size_t(c)];
    }
    prev_px = std::move(cur);
  }
  return out;
}

/// Reference coder: one full-map forward per wavefront group. Produces the
/// same symbol stream structure as encode_patch but pays the quadratic
/// recompute cost; it anchors both the equivalence oracle and the speed
/// comparison.
template <typename T>
Bytes naive_encode_patch(const Image8& patch, const ModelParams<T>& p) {
  const int Hp = patch.height, Wp = patch.width, C = patch.channels;
  Tensor<T> xnorm({Hp, Wp, C});
  ScanOrder scan(Hp, Wp);
  RangeEncoder enc;
  for (int g = 0; g < scan.groups(); ++g) {
    if (g > 0)
      for (auto [i, j] : scan.positions(g - 1))
        for (int c = 0; c < C; ++c) xnorm(i, j, c) = pixel_norm<T>(patch.at(i, j, c));
    Tensor<T> raw = mgcf_forward(xnorm, p);
    for (auto [i, j] : scan.positions(g)) {
      std::vector<uint8_t> px(static_cast<size_t>(C));
      for (int c = 0; c < C; ++c) px[size_t(c)] = patch.at(i, j, c);
      detail::code_position(raw.data() + (int64_t(i) * Wp + j) * p.cfg.head_channels(),
                            px.data(), C, p.cfg, &enc, nullptr, nullptr);
    }
  }
  return enc.finish();
}

// ---------------------------------------------------------------------------
// Whole-image coding: independent per-patch jobs, deterministic regardless
// of the thread count.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<Bytes> encode_patches(const Image8& img, int patch, const ModelParams<T>& p,
                                  int threads) {
  auto rects = tile_rects(img.width, img.height, patch);
  std::vector<Bytes> payloads(rects.size());
  parallel_for(int64_t(rects.size()), threads, [&](int64_t i) {
    const auto& r = rects[size_t(i)];
    payloads[size_t(i)] = encode_patch(crop_image(img, r.x0, r.y0, r.w, r.h), p);
  });
  return payloads;
}

template <typename T>
Image8 decode_patches(const std::vector<Bytes>& payloads, int width, int height, int channels,
                      int patch, const ModelParams<T>& p, int threads) {
  auto rects = tile_rects(width, height, patch);
  if (payloads.size() != rects.size()) throw FormatError("payload count does not match geometry");
  Image8 out(width, height, channels);
  parallel_for(int64_t(rects.size()), threads, [&](int64_t i) {
    const auto& r = rects[size_t(i)];
    Image8 tile = decode_patch(payloads[size_t(i)].data(), payloads[size_t(i)].size(), r.w, r.h,
                               channels, p);
    paste_image(out, tile, r.x0, r.y0);
  });
  return out;
}

}  // namespace callic
