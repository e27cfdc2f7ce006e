// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>

#include "callic/adam.hpp"
#include "callic/cci.hpp"

namespace callic {

struct TrainConfig {
  int patch = 64;
  int batch = 32;
  double lr = 5e-4;
  int steps = 1000;
  uint64_t seed = 0;
  double val_frac = 0.1;
  int val_interval = 50;

  void validate() const {
    if (patch < 8) throw ConfigError("train patch must be >= 8");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (lr <= 0) throw ConfigError("learning rate must be positive");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!(val_frac >= 0 && val_frac < 1)) throw ConfigError("val fraction must be in [0, 1)");
    if (val_interval < 1) throw ConfigError("val interval must be >= 1");
  }
};

struct TrainLogRow {
  int step = 0;
  double loss = 0;  // batch bits per subpixel
  double val_bpsp = 0;
  bool has_val = false;
};

struct TrainOutcome {
  ModelParams<float> params;  // best-validation weights (last weights if no val)
  std::vector<TrainLogRow> log;
  double best_val_bpsp = 0;
  int best_val_step = -1;
  bool aborted_non_finite = false;
};

/// Full patch-grid crops from every image large enough to supply them;
/// partial border tiles are not used for training, and images smaller than
/// the patch in either axis are skipped with a warning.
inline std::vector<Image8> extract_patches(const std::vector<Image8>& images, int patch) {
  std::vector<Image8> out;
  for (size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (img.width < patch || img.height < patch) {
      std::fprintf(stderr, "warning: image %zu (%dx%d) is smaller than the %d-pixel patch; skipped\n",
                   n, img.width, img.height, patch);
      continue;
    }
    for (int y = 0; y + patch <= img.height; y += patch)
      for (int x = 0; x + patch <= img.width; x += patch)
        out.push_back(crop_image(img, x, y, patch, patch));
  }
  return out;
}

/// Code length of a whole image in bits under `p` (sum over the patch grid,
/// border tiles included), divided by nothing: callers divide by subpixels.
template <typename T>
double image_bits(const Image8& img, const ModelParams<T>& p, int patch, int threads = 1) {
  auto rects = tile_rects(img.width, img.height, patch);
  std::vector<double> bits(rects.size());
  parallel_for(int64_t(rects.size()), threads, [&](int64_t i) {
    const auto& r = rects[size_t(i)];
    bits[size_t(i)] = patch_nll(crop_image(img, r.x0, r.y0, r.w, r.h), p);
  });
  double total = 0;
  for (double b : bits) total += b;
  return total;
}

/// Mean bits per subpixel of a patch set.
template <typename T>
double mean_bpsp(const std::vector<Image8>& patches, const ModelParams<T>& p, int threads = 1) {
  if (patches.empty()) throw ConfigError("mean_bpsp: empty patch set");
  std::vector<double> bits(patches.size());
  parallel_for(int64_t(patches.size()), threads, [&](int64_t i) {
    bits[size_t(i)] = patch_nll(patches[size_t(i)], p);
  });
  double total = 0;
  int64_t sub = 0;
  for (size_t i = 0; i < patches.size(); ++i) {
    total += bits[i];
    sub += patches[i].subpixels();
  }
  return total / double(sub);
}

/// Adam training of the full parameter set on patches sampled with
/// replacement. Validation patches are split off up front; the returned
/// weights are the ones with the best validation rate (the final weights
/// when no validation split exists). A non-finite batch loss stops training
/// and keeps the last good weights.
inline TrainOutcome pretrain(const std::vector<Image8>& images, const ModelConfig& mcfg,
                             const TrainConfig& tcfg, int threads = 1) {
  mcfg.validate();
  tcfg.validate();
  std::vector<Image8> patches = extract_patches(images, tcfg.patch);
  if (patches.empty()) throw ConfigError("no training patches: every image is smaller than the patch size");
  for (const auto& p : patches)
    if (p.channels != mcfg.channels) throw ConfigError("training image channel count does not match the model");

  Rng rng(tcfg.seed);
  // Fisher-Yates shuffle, then the tail becomes the validation split.
  for (size_t i = patches.size(); i > 1; --i)
    std::swap(patches[i - 1], patches[size_t(rng.below(uint64_t(i)))]);
  size_t n_val = size_t(double(patches.size()) * tcfg.val_frac);
  if (tcfg.val_frac > 0 && n_val == 0 && patches.size() > 1) n_val = 1;
  std::vector<Image8> val(patches.end() - ptrdiff_t(n_val), patches.end());
  patches.resize(patches.size() - n_val);
  if (patches.empty()) throw ConfigError("validation split consumed every patch");

  TrainOutcome out;
  out.params = ModelParams<float>::init(mcfg, tcfg.seed);
  ModelParams<float> best = out.params;
  ModelParams<float> grads = ModelParams<float>::zeros(mcfg);
  std::vector<AdamState<float>> adam;
  out.params.for_each_tensor(
      [&](Tensor<float>& t, const std::string&) { adam.emplace_back(t.shape()); });

  const int64_t sub_per_patch = int64_t(tcfg.patch) * tcfg.patch * mcfg.channels;
  auto run_val = [&](int step) {
    if (val.empty()) return;
    double v = mean_bpsp(val, out.params, threads);
    out.log.push_back({step, 0, v, true});
    if (out.best_val_step < 0 || v < out.best_val_bpsp) {
      out.best_val_bpsp = v;
      out.best_val_step = step;
      best = out.params;
    }
  };

  for (int step = 0; step < tcfg.steps; ++step) {
    std::vector<int> batch(size_t(tcfg.batch));
    for (auto& b : batch) b = int(rng.below(uint64_t(patches.size())));
    grads.for_each_tensor([](Tensor<float>& t, const std::string&) { t.set_zero(); });
    const float gscale = float(1.0 / (double(tcfg.batch) * double(sub_per_patch)));

    double loss_bits = 0;
    bool finite = true;
    try {
      const int chunk = std::max(1, threads);
      for (size_t s0 = 0; s0 < batch.size(); s0 += size_t(chunk)) {
        const size_t s1 = std::min(batch.size(), s0 + size_t(chunk));
        std::vector<ModelParams<float>> part(s1 - s0);
        std::vector<double> bits(s1 - s0);
        parallel_for(int64_t(s1 - s0), threads, [&](int64_t i) {
          part[size_t(i)] = ModelParams<float>::zeros(mcfg);
          bits[size_t(i)] = patch_nll(patches[size_t(batch[s0 + size_t(i)])], out.params,
                                      &part[size_t(i)], gscale);
        });
        for (size_t i = 0; i < part.size(); ++i) {
          loss_bits += bits[i];
          std::vector<const Tensor<float>*> src;
          part[i].for_each_tensor(
              [&](const Tensor<float>& t, const std::string&) { src.push_back(&t); });
          size_t j = 0;
          grads.for_each_tensor([&](Tensor<float>& t, const std::string&) {
            t.vec() += src[j++]->vec();
          });
        }
      }
    } catch (const NumericFault&) {
      finite = false;
    }
    double loss = loss_bits / (double(tcfg.batch) * double(sub_per_patch));
    if (!finite || !std::isfinite(loss)) {
      out.aborted_non_finite = true;
      break;
    }
    size_t ti = 0;
    std::vector<Tensor<float>*> gt;
    grads.for_each_tensor([&](Tensor<float>& t, const std::string&) { gt.push_back(&t); });
    out.params.for_each_tensor([&](Tensor<float>& t, const std::string&) {
      adam_step(t, *gt[ti], adam[ti], float(tcfg.lr));
      ti++;
    });
    out.log.push_back({step, loss, 0, false});
    if ((step + 1) % tcfg.val_interval == 0) run_val(step);
  }
  if (tcfg.steps > 0 && !out.aborted_non_finite &&
      (out.log.empty() || !out.log.back().has_val))
    run_val(tcfg.steps - 1);
  if (out.best_val_step >= 0) out.params = best;
  return out;
}

}  // namespace callic
