// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "callic/adapt.hpp"
#include "test_util.hpp"

using namespace callic;
using testutil::max_fd_err;
using testutil::rel_err;

namespace {

ModelConfig tiny_config(int channels = 3) {
  ModelConfig c;
  c.depth = 1;
  c.dim = 8;
  c.kernel = 3;
  c.mixtures = 2;
  c.mlp_ratio = 2;
  c.channels = channels;
  return c;
}

AdapterConfig tiny_adapter() {
  AdapterConfig a;
  a.rank = 2;
  a.conv_rank = 2;
  return a;
}

template <typename T>
ModelParams<T> random_params(const ModelConfig& cfg, uint64_t seed, double head_std) {
  ModelParams<T> p = cast_params<T>(ModelParams<float>::init(cfg, seed));
  Rng rng(seed + 99);
  for (int64_t i = 0; i < p.head_w.numel(); ++i) p.head_w[i] = T(rng.normal() * head_std);
  for (int64_t i = 0; i < p.head_b.numel(); ++i) p.head_b[i] = T(rng.normal() * head_std);
  return p;
}

Image8 random_patch(int h, int w, int ch, uint64_t seed) {
  Image8 img(w, h, ch);
  Rng rng(seed);
  for (auto& px : img.pixels) px = uint8_t(rng.below(256));
  return img;
}

// Gradient image: cheap to predict, so a few adaptation steps actually move
// the rate instead of fighting noise.
Image8 smooth_patch(int h, int w, int ch) {
  Image8 img(w, h, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        img.at(y, x, c) = uint8_t((x * 5 + y * 3 + c * 40) % 256);
  return img;
}

template <typename T>
void randomize_weights(IncrementalWeights<T>& iw, uint64_t seed, double std) {
  Rng rng(seed);
  iw.for_each_tensor([&](Tensor<T>& t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal() * std);
  });
}

}  // namespace

TEST_CASE("lora delta on a hand example") {
  Tensor<double> a({2, 1}), b({1, 2});
  a[0] = 1;
  a[1] = 2;
  b[0] = 3;
  b[1] = 4;
  Tensor<double> d = lora_delta(a, b);
  CHECK(d(0, 0) == 3.0);
  CHECK(d(0, 1) == 4.0);
  CHECK(d(1, 0) == 6.0);
  CHECK(d(1, 1) == 8.0);
}

TEST_CASE("rank-1 conv delta is the outer product of its mode factors") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  acfg.conv_rank = 1;
  IncrementalWeights<double> iw = IncrementalWeights<double>::zeros(cfg, acfg);
  auto& ba = iw.blocks[0];
  Rng rng(5);
  for (int64_t i = 0; i < ba.conv_a.numel(); ++i) ba.conv_a[i] = rng.normal();
  for (int64_t i = 0; i < ba.conv_c.numel(); ++i) ba.conv_c[i] = rng.normal();
  for (int64_t i = 0; i < ba.conv_d.numel(); ++i) ba.conv_d[i] = rng.normal();
  Tensor<double> d = conv_delta(ba, iw.has_core);
  for (int o = 0; o < cfg.dim; ++o)
    for (int p = 0; p < cfg.kernel; ++p)
      for (int q = 0; q < cfg.kernel; ++q)
        CHECK(rel_err(d(o, 0, p, q), ba.conv_a(o, 0) * ba.conv_c(p, 0) * ba.conv_d(q, 0)) <
              1e-12);
}

TEST_CASE("lora and conv factor gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  for (bool core : {false, true}) {
    AdapterConfig ac = acfg;
    ac.trainable_core = core;
    IncrementalWeights<double> iw = IncrementalWeights<double>::zeros(cfg, ac);
    randomize_weights(iw, 7, 0.3);
    auto& ba = iw.blocks[0];

    // Loss: sum of delta entries weighted by a fixed random tensor.
    Tensor<double> wd(conv_delta(ba, iw.has_core).shape());
    Rng rng(8);
    for (int64_t i = 0; i < wd.numel(); ++i) wd[i] = rng.normal();
    auto eval = [&] {
      Tensor<double> d = conv_delta(ba, iw.has_core);
      double s = 0;
      for (int64_t i = 0; i < d.numel(); ++i) s += d[i] * wd[i];
      return s;
    };
    IncrementalWeights<double> gr = IncrementalWeights<double>::zeros(cfg, ac);
    conv_delta_grad(ba, iw.has_core, wd, gr.blocks[0]);
    CHECK(max_fd_err(ba.conv_a, gr.blocks[0].conv_a, eval) < 1e-6);
    CHECK(max_fd_err(ba.conv_c, gr.blocks[0].conv_c, eval) < 1e-6);
    CHECK(max_fd_err(ba.conv_d, gr.blocks[0].conv_d, eval) < 1e-6);
    if (core) CHECK(max_fd_err(ba.core, gr.blocks[0].core, eval) < 1e-6);

    auto eval_lora = [&] {
      Tensor<double> d = lora_delta(ba.a_wa, ba.b_wa);
      double s = 0;
      for (int64_t i = 0; i < d.numel(); ++i) s += d[i] * wd[i % wd.numel()];
      return s;
    };
    Tensor<double> g2(lora_delta(ba.a_wa, ba.b_wa).shape());
    for (int64_t i = 0; i < g2.numel(); ++i) g2[i] = wd[i % wd.numel()];
    gr.blocks[0].a_wa.set_zero();
    gr.blocks[0].b_wa.set_zero();
    lora_grad(ba.a_wa, ba.b_wa, g2, gr.blocks[0].a_wa, gr.blocks[0].b_wa);
    CHECK(max_fd_err(ba.a_wa, gr.blocks[0].a_wa, eval_lora) < 1e-6);
    CHECK(max_fd_err(ba.b_wa, gr.blocks[0].b_wa, eval_lora) < 1e-6);
  }
}

TEST_CASE("zero delta merge is bitwise identity") {
  ModelConfig cfg = tiny_config();
  cfg.depth = 2;
  ModelParams<float> base = random_params<float>(cfg, 11, 0.05);
  AdapterConfig acfg = tiny_adapter();
  IncrementalWeights<float> iw = IncrementalWeights<float>::zeros(cfg, acfg);
  ModelParams<float> merged = merge_adapters(base, iw);

  std::vector<const Tensor<float>*> bt, mt;
  const_cast<ModelParams<float>&>(base).for_each_tensor(
      [&](Tensor<float>& t, const std::string&) { bt.push_back(&t); });
  merged.for_each_tensor([&](Tensor<float>& t, const std::string&) { mt.push_back(&t); });
  REQUIRE(bt.size() == mt.size());
  for (size_t i = 0; i < bt.size(); ++i)
    for (int64_t j = 0; j < bt[i]->numel(); ++j)
      CHECK(std::memcmp(bt[i]->data(), mt[i]->data(),
                        sizeof(float) * size_t(bt[i]->numel())) == 0);

  // The freshly initialised adapter also starts as an exact zero delta: its
  // second factors are zero.
  IncrementalWeights<float> fresh = IncrementalWeights<float>::init(cfg, acfg, 3);
  ModelParams<float> m2 = merge_adapters(base, fresh);
  Tensor<float> x({5, 5, 3});
  Rng rng(12);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform(-1.0, 1.0));
  Tensor<float> y0 = mgcf_forward(x, base);
  Tensor<float> y1 = mgcf_forward(x, m2);
  for (int64_t i = 0; i < y0.numel(); ++i) CHECK(y0[i] == y1[i]);
}

TEST_CASE("merged forward equals composed forward") {
  for (bool core : {false, true}) {
    ModelConfig cfg = tiny_config();
    cfg.depth = 2;
    ModelParams<double> base = random_params<double>(cfg, 21, 0.05);
    AdapterConfig acfg = tiny_adapter();
    acfg.trainable_core = core;
    IncrementalWeights<double> iw = IncrementalWeights<double>::init(cfg, acfg, 22);
    randomize_weights(iw, 23, 0.05);

    Tensor<double> x({6, 7, 3});
    Rng rng(24);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> merged = mgcf_forward(x, merge_adapters(base, iw));
    Tensor<double> composed = mgcf_forward_composed(x, base, iw);
    double worst = 0;
    for (int64_t i = 0; i < merged.numel(); ++i)
      worst = std::max(worst, std::abs(merged[i] - composed[i]));
    CHECK(worst < 1e-10);
  }
  // Production float precision, the acceptance bound.
  ModelConfig cfg = tiny_config();
  ModelParams<float> base = random_params<float>(cfg, 31, 0.05);
  IncrementalWeights<float> iw = IncrementalWeights<float>::init(cfg, tiny_adapter(), 32);
  randomize_weights(iw, 33, 0.05);
  Tensor<float> x({8, 8, 3});
  Rng rng(34);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform(-1.0, 1.0));
  Tensor<float> merged = mgcf_forward(x, merge_adapters(base, iw));
  Tensor<float> composed = mgcf_forward_composed(x, base, iw);
  double worst = 0;
  for (int64_t i = 0; i < merged.numel(); ++i)
    worst = std::max(worst, double(std::abs(merged[i] - composed[i])));
  CHECK(worst < 1e-5);
}

TEST_CASE("merge keeps the depthwise kernel causal") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> base = random_params<float>(cfg, 41, 0.05);
  AdapterConfig acfg = tiny_adapter();
  IncrementalWeights<float> iw = IncrementalWeights<float>::init(cfg, acfg, 42);
  randomize_weights(iw, 43, 0.5);
  ModelParams<float> merged = merge_adapters(base, iw);
  const Mask ma = build_mask(cfg.kernel, MaskType::kA);
  int h = cfg.kernel / 2;
  for (int c = 0; c < cfg.dim; ++c)
    for (int p = 0; p < cfg.kernel; ++p)
      for (int q = 0; q < cfg.kernel; ++q)
        if (!ma.allowed(p - h, q - h)) CHECK(merged.blocks[0].dw(c, 0, p, q) == 0.0f);
}

TEST_CASE("quantisation: bins, reconstruction, straight-through value") {
  AdapterConfig acfg;  // step 0.05
  CHECK(quantize_bin(0.0, acfg) == 0);
  CHECK(quantize_bin(0.12, acfg) == 2);
  CHECK(quantize_bin(-0.12, acfg) == -2);
  CHECK(quantize_bin(0.125, acfg) == 3);  // half away from zero
  CHECK(quantize_bin(-0.125, acfg) == -3);
  CHECK(quantize_bin(1e9, acfg) == acfg.k_max);
  CHECK(quantize_bin(-1e9, acfg) == -acfg.k_max);
  CHECK(dequantize_bin<double>(2, acfg) == 0.1);
  CHECK(ste_value(0.12, acfg) == 0.1);
  CHECK(ste_value(0.0, acfg) == 0.0);
  // The value used in training equals the value the decoder reconstructs.
  Rng rng(51);
  for (int i = 0; i < 1000; ++i) {
    double phi = rng.normal() * 0.2;
    CHECK(ste_value(phi, acfg) == dequantize_bin<double>(quantize_bin(phi, acfg), acfg));
  }
}

TEST_CASE("quantize_weights and weights_from_bins invert each other") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  IncrementalWeights<float> iw = IncrementalWeights<float>::init(cfg, acfg, 61);
  randomize_weights(iw, 62, 0.1);
  std::vector<int32_t> bins = quantize_weights(iw, acfg);
  CHECK(int64_t(bins.size()) == iw.count());
  IncrementalWeights<float> back = weights_from_bins<float>(cfg, acfg, bins);
  std::vector<int32_t> bins2 = quantize_weights(back, acfg);
  CHECK(bins == bins2);

  // Round-tripped tensors carry exactly the straight-through values.
  std::vector<Tensor<float>*> orig, rec;
  iw.for_each_tensor([&](Tensor<float>& t) { orig.push_back(&t); });
  back.for_each_tensor([&](Tensor<float>& t) { rec.push_back(&t); });
  for (size_t i = 0; i < orig.size(); ++i)
    for (int64_t j = 0; j < orig[i]->numel(); ++j)
      CHECK((*rec[i])[j] == ste_value((*orig[i])[j], acfg));

  bins.pop_back();
  CHECK_THROWS_AS(weights_from_bins<float>(cfg, acfg, bins), FormatError);
}

TEST_CASE("adapter size: defaults land near 25K parameters") {
  ModelConfig cfg;  // depth 3, dim 128, k 7
  AdapterConfig acfg;  // rank 6, conv rank 4
  IncrementalWeights<float> iw = IncrementalWeights<float>::zeros(cfg, acfg);
  CHECK(iw.count() == 22440);
  CHECK(iw.count() >= 17500);
  CHECK(iw.count() <= 32500);

  AdapterConfig bad = acfg;
  bad.conv_rank = 9;  // exceeds the 7x7 kernel
  CHECK_THROWS_AS(IncrementalWeights<float>::zeros(cfg, bad), ConfigError);
}

TEST_CASE("schedule: endpoints, midpoint, monotonicity") {
  // Defaults: T=50, b=0.2, d=0.1, e=1.
  CHECK(schedule_ratio(0.0, 50, 0.2, 0.1, 1.0) == 0.2);
  CHECK(schedule_ratio(45.0, 50, 0.2, 0.1, 1.0) == 1.0);
  CHECK(schedule_ratio(49.0, 50, 0.2, 0.1, 1.0) == 1.0);
  CHECK(rel_err(schedule_ratio(22.5, 50, 0.2, 0.1, 1.0), 0.6) < 1e-12);
  for (double e : {0.1, 0.3, 1.0}) {
    CHECK(schedule_ratio(0.0, 50, 0.2, 0.1, e) == 0.2);
    CHECK(schedule_ratio(45.0, 50, 0.2, 0.1, e) == 1.0);
    double prev = 0.0;
    for (int t = 0; t <= 50; ++t) {
      double f = schedule_ratio(double(t), 50, 0.2, 0.1, e);
      CHECK(f >= prev);
      CHECK(f >= 0.2);
      CHECK(f <= 1.0);
      prev = f;
    }
  }
  CHECK_THROWS_AS(schedule_ratio(0.0, 0, 0.2, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(schedule_ratio(0.0, 50, 0.0, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(schedule_ratio(0.0, 50, 0.2, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(schedule_ratio(0.0, 50, 0.2, 0.1, 0.0), ConfigError);
}

TEST_CASE("patch ranking is by descending rate with stable ties") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> p = random_params<float>(cfg, 71, 0.05);
  std::vector<Image8> patches;
  patches.push_back(smooth_patch(6, 6, 3));       // cheap
  patches.push_back(random_patch(6, 6, 3, 72));   // expensive
  patches.push_back(random_patch(6, 6, 3, 73));   // expensive
  std::vector<double> bits;
  std::vector<int> order = rank_patches(patches, p, &bits, 1);
  REQUIRE(order.size() == 3);
  CHECK(order[2] == 0);  // the smooth patch costs the least
  double prev = 1e300;
  for (int idx : order) {
    double bpsp = bits[size_t(idx)] / double(patches[size_t(idx)].subpixels());
    CHECK(bpsp <= prev);
    prev = bpsp;
  }
  // Identical patches tie; stable sort keeps index order.
  std::vector<Image8> same(4, patches[1]);
  std::vector<int> tie = rank_patches(same, p, nullptr, 1);
  CHECK(tie == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("weight surrogate: two bits at zero when step equals scale") {
  AdapterConfig acfg;  // step == prior_scale == 0.05
  double g = 1;
  CHECK(detail::weight_surrogate_bits(0.0, acfg, &g) == 2.0);
  CHECK(g == 0.0);
  // Cost grows with |x| and the gradient matches finite differences.
  double prev = 2.0;
  for (double x : {0.01, 0.05, 0.2, 0.7}) {
    double bits = detail::weight_surrogate_bits(x, acfg, &g);
    CHECK(bits > prev);
    prev = bits;
    double h = 1e-6;
    double fd = (detail::weight_surrogate_bits(x + h, acfg, nullptr) -
                 detail::weight_surrogate_bits(x - h, acfg, nullptr)) /
                (2 * h);
    CHECK(rel_err(g, fd) < 1e-6);
  }
  // Near a bin at distance step the surrogate prices roughly bits(1); they
  // differ by the pdf's curvature across the bin.
  WeightPrior prior = acfg.prior();
  CHECK(std::abs(detail::weight_surrogate_bits(0.05, acfg, nullptr) - prior.bits(1)) < 0.05);
}

TEST_CASE("mdl loss: parts add up and noise is seeded") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  ModelParams<float> base = random_params<float>(cfg, 81, 0.05);
  IncrementalWeights<float> phi = IncrementalWeights<float>::init(cfg, acfg, 82);
  std::vector<Image8> patches = {random_patch(5, 5, 3, 83), smooth_patch(5, 5, 3)};
  std::vector<int> sel = {0, 1};

  Rng r1(7), r2(7), r3(8);
  IncrementalWeights<float>* nog = nullptr;
  MdlParts a = mdl_loss(patches, sel, base, phi, acfg, r1, nog);
  MdlParts b = mdl_loss(patches, sel, base, phi, acfg, r2, nog);
  MdlParts c = mdl_loss(patches, sel, base, phi, acfg, r3, nog);
  CHECK(a.total() == a.weight_bits + a.pixel_bits);
  CHECK(a.weight_bits == b.weight_bits);
  CHECK(a.pixel_bits == b.pixel_bits);
  CHECK(a.weight_bits != c.weight_bits);  // different dither draw
  CHECK(a.pixel_bits == c.pixel_bits);    // network term is dither-free

  // Without dither the weight term is the plain surrogate sum.
  Rng r4(9);
  MdlParts d = mdl_loss(patches, sel, base, phi, acfg, r4, nog, true, 1, false);
  double manual = 0;
  phi.for_each_tensor([&](Tensor<float>& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
      manual += detail::weight_surrogate_bits(double(t[i]), acfg, nullptr);
  });
  CHECK(rel_err(d.weight_bits, manual) < 1e-9);

  // Thread count does not change the sums.
  Rng r5(9), r6(9);
  MdlParts t1 = mdl_loss(patches, sel, base, phi, acfg, r5, nog, true, 1, false);
  MdlParts t4 = mdl_loss(patches, sel, base, phi, acfg, r6, nog, true, 4, false);
  CHECK(t1.weight_bits == t4.weight_bits);
  CHECK(t1.pixel_bits == t4.pixel_bits);
}

TEST_CASE("mdl gradient against finite differences") {
  // Smooth variant: no straight-through quantisation, noise pinned to zero.
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  ModelParams<double> base = random_params<double>(cfg, 91, 0.05);
  IncrementalWeights<double> phi = IncrementalWeights<double>::init(cfg, acfg, 92);
  randomize_weights(phi, 93, 0.02);
  std::vector<Image8> patches = {random_patch(4, 4, 3, 94)};
  std::vector<int> sel = {0};
  Rng nrng(1);

  IncrementalWeights<double> grads = IncrementalWeights<double>::zeros(cfg, acfg);
  mdl_loss(patches, sel, base, phi, acfg, nrng, &grads, false, 1, false);
  IncrementalWeights<double>* nog = nullptr;
  auto eval = [&] {
    Rng r(1);
    return mdl_loss(patches, sel, base, phi, acfg, r, nog, false, 1, false).total();
  };
  std::vector<Tensor<double>*> pt, gt;
  phi.for_each_tensor([&](Tensor<double>& t) { pt.push_back(&t); });
  grads.for_each_tensor([&](Tensor<double>& t) { gt.push_back(&t); });
  for (size_t i = 0; i < pt.size(); ++i) {
    double err = max_fd_err(*pt[i], *gt[i], eval, 1e-5);
    CHECK(err < 1e-2);
  }
}

TEST_CASE("gradients flow to every adapter tensor after warmup") {
  // One step from the zero-delta init leaves some factors at zero (their
  // partners are still zero), but a couple of steps unfreeze all of them.
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  acfg.steps = 3;
  acfg.lr = 5e-3;
  ModelParams<float> base = random_params<float>(cfg, 101, 0.05);
  Image8 img = smooth_patch(10, 10, 3);
  AdaptOutcome out = rpft_finetune(img, base, 5, acfg, 1);
  int nonzero = 0;
  for (int32_t k : out.phi_int) nonzero += k != 0;
  CHECK(nonzero > 0);
}

TEST_CASE("rpft: zero steps yields the zero delta") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  acfg.steps = 0;
  ModelParams<float> base = random_params<float>(cfg, 111, 0.05);
  Image8 img = random_patch(9, 9, 3, 112);
  AdaptOutcome out = rpft_finetune(img, base, 4, acfg, 1);
  CHECK(out.report.empty());
  CHECK(out.grad_patch_evals == 0);
  for (int32_t k : out.phi_int) CHECK(k == 0);
  CHECK(out.final_pixel_bits == out.base_pixel_bits);
}

TEST_CASE("rpft: deterministic, schedule-shaped, thread invariant") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  acfg.steps = 6;
  acfg.seed = 5;
  ModelParams<float> base = random_params<float>(cfg, 121, 0.05);
  Image8 img = random_patch(12, 12, 3, 122);

  AdaptOutcome a = rpft_finetune(img, base, 4, acfg, 1);
  AdaptOutcome b = rpft_finetune(img, base, 4, acfg, 1);
  AdaptOutcome c = rpft_finetune(img, base, 4, acfg, 3);
  CHECK(a.phi_int == b.phi_int);
  CHECK(a.phi_int == c.phi_int);
  REQUIRE(a.report.size() == 6);
  CHECK(a.final_weight_bits == c.final_weight_bits);
  CHECK(a.final_pixel_bits == c.final_pixel_bits);

  const int n = int(tile_rects(img.width, img.height, 4).size());
  int prev_sel = 0;
  int64_t evals = 0;
  for (int t = 0; t < 6; ++t) {
    double f = schedule_ratio(double(t), 6.0, acfg.floor_frac, acfg.tail_frac, acfg.exponent);
    int expect = std::max(1, std::min(n, int(std::ceil(f * n))));
    CHECK(a.report[size_t(t)].step == t);
    CHECK(a.report[size_t(t)].selected == expect);
    CHECK(a.report[size_t(t)].selected >= prev_sel);
    prev_sel = a.report[size_t(t)].selected;
    evals += expect;
  }
  CHECK(a.grad_patch_evals == evals);
  CHECK(a.report.back().selected == n);

  // Different seed, different trajectory.
  AdapterConfig acfg2 = acfg;
  acfg2.seed = 6;
  AdaptOutcome d = rpft_finetune(img, base, 4, acfg2, 1);
  CHECK(a.phi_int != d.phi_int);
}

TEST_CASE("rpft reduces the description length when weights are cheap") {
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  acfg.steps = 50;
  acfg.lr = 2e-2;
  acfg.prior_scale = 0.3;  // wide prior: weight bits cost little
  ModelParams<float> base = random_params<float>(cfg, 131, 0.05);
  Image8 img = smooth_patch(24, 24, 3);
  AdaptOutcome out = rpft_finetune(img, base, 8, acfg, 1);

  // Pixel rate strictly improves once the prior stops dominating.
  CHECK(out.final_pixel_bits < out.base_pixel_bits - 100.0);

  // And the whole description (weights + pixels) beats transmitting the
  // zero delta under the same prior.
  WeightPrior prior = acfg.prior();
  double zero_cost =
      out.base_pixel_bits + double(out.phi_int.size()) * prior.bits(0);
  CHECK(out.final_pixel_bits + out.final_weight_bits < zero_cost);
}

TEST_CASE("rpft refuses to buy weights a tiny image cannot pay for") {
  // With the default narrow prior, each escaped weight costs more than the
  // pixel bits it can save on a few hundred subpixels, so the minimum
  // description keeps essentially the whole delta in the zero bin.
  ModelConfig cfg = tiny_config();
  AdapterConfig acfg = tiny_adapter();
  acfg.steps = 25;
  acfg.lr = 2e-2;
  ModelParams<float> base = random_params<float>(cfg, 131, 0.05);
  Image8 img = smooth_patch(16, 16, 3);
  AdaptOutcome out = rpft_finetune(img, base, 8, acfg, 1);
  int nonzero = 0;
  for (int32_t k : out.phi_int) nonzero += k != 0;
  CHECK(nonzero <= int(out.phi_int.size()) / 10);
  CHECK(out.final_pixel_bits <= out.base_pixel_bits * 1.001);
}
