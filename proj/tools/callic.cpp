// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: pretrain, encode, decode, bench, inspect.
// Exit codes: 0 ok, 1 bad usage, 2 I/O failure, 3 malformed stream,
// 4 model/container mismatch, 5 numeric fault, 6 bad configuration.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <CLI11.hpp>

#include "callic/adapt.hpp"
#include "callic/checkpoint.hpp"
#include "callic/container.hpp"
#include "callic/pretrain.hpp"

namespace {

using namespace callic;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int default_threads() {
  if (const char* env = std::getenv("CALLIC_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return data;
}

void write_file(const std::string& path, const Bytes& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  if (!out) throw IoError("write failed: " + path);
}

std::string hex8(const std::array<uint8_t, 8>& d) {
  char buf[17];
  for (int i = 0; i < 8; ++i) std::snprintf(buf + 2 * i, 3, "%02x", d[i]);
  return std::string(buf, 16);
}

struct ModelOpts {
  int depth = 3, dim = 128, kernel = 7, mixtures = 5, mlp_ratio = 4, channels = 3;
  void attach(CLI::App* app) {
    app->add_option("--depth", depth, "Gated conv blocks");
    app->add_option("--dim", dim, "Feature width");
    app->add_option("--kernel", kernel, "Depthwise kernel size (odd)");
    app->add_option("--mixtures", mixtures, "Logistic mixture components");
    app->add_option("--mlp-ratio", mlp_ratio, "MLP expansion ratio");
    app->add_option("--channels", channels, "Image channels (1 or 3)");
  }
  ModelConfig config() const {
    ModelConfig c;
    c.depth = depth;
    c.dim = dim;
    c.kernel = kernel;
    c.mixtures = mixtures;
    c.mlp_ratio = mlp_ratio;
    c.channels = channels;
    c.validate();
    return c;
  }
};

struct AdaptOpts {
  int rank = 6, conv_rank = 4, steps = 50, k_max = 255;
  double lr = 1e-2, step = 0.05, prior_scale = 0.05;
  double floor_frac = 0.2, tail_frac = 0.1, exponent = 1.0;
  uint64_t seed = 0;
  bool trainable_core = false;
  void attach(CLI::App* app) {
    app->add_option("--rank", rank, "Product-delta rank for the projections");
    app->add_option("--conv-rank", conv_rank, "Factored delta rank for depthwise kernels");
    app->add_option("--steps", steps, "Fine-tuning steps");
    app->add_option("--lr", lr, "Fine-tuning learning rate");
    app->add_option("--w", step, "Weight quantisation bin width");
    app->add_option("--s", prior_scale, "Logistic weight prior scale");
    app->add_option("--k-max", k_max, "Largest weight bin magnitude");
    app->add_option("--b", floor_frac, "Initial fraction of patches trained");
    app->add_option("--d", tail_frac, "Final fraction of steps on all patches");
    app->add_option("--e", exponent, "Schedule ramp exponent");
    app->add_option("--seed", seed, "Adaptation RNG seed");
    app->add_flag("--trainable-core", trainable_core, "Train a general mixing core");
  }
  AdapterConfig config() const {
    AdapterConfig a;
    a.rank = rank;
    a.conv_rank = conv_rank;
    a.steps = steps;
    a.lr = lr;
    a.step = step;
    a.prior_scale = prior_scale;
    a.k_max = k_max;
    a.floor_frac = floor_frac;
    a.tail_frac = tail_frac;
    a.exponent = exponent;
    a.seed = seed;
    a.trainable_core = trainable_core;
    a.validate();
    return a;
  }
};

std::vector<Image8> load_corpus(const std::vector<std::string>& paths, int synth_count,
                                int synth_size, int channels, uint64_t seed) {
  std::vector<Image8> imgs;
  for (const auto& p : paths) {
    try {
      imgs.push_back(read_image(p));
    } catch (const Error& e) {
      std::fprintf(stderr, "warning: skipping %s (%s)\n", p.c_str(), e.what());
    }
  }
  if (synth_count > 0) {
    auto extra = synth_corpus(synth_count, synth_size, synth_size, channels, seed,
                              {SynthKind::kGradient, SynthKind::kChecker,
                               SynthKind::kBlurredNoise, SynthKind::kFractal});
    imgs.insert(imgs.end(), extra.begin(), extra.end());
  }
  return imgs;
}

int cmd_pretrain(const std::vector<std::string>& inputs, int synth, int synth_size,
                 const ModelOpts& mo, const TrainConfig& tcfg, const std::string& out_path,
                 const std::string& log_path, int threads) {
  ModelConfig mcfg = mo.config();
  auto imgs = load_corpus(inputs, synth, synth_size, mcfg.channels, tcfg.seed + 7);
  if (imgs.empty()) throw ConfigError("no training images: pass files or --synth N");
  auto t0 = Clock::now();
  TrainOutcome r = pretrain(imgs, mcfg, tcfg, threads);
  save_checkpoint(out_path, r.params);
  if (!log_path.empty()) {
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open " + log_path + " for writing");
    log << "step,loss,val_bpsp\n";
    for (const auto& row : r.log) {
      log << row.step << ',';
      if (!row.has_val) log << row.loss;
      log << ',';
      if (row.has_val) log << row.val_bpsp;
      log << '\n';
    }
  }
  std::printf("saved %s (%lld params, digest %s) in %.1fs\n", out_path.c_str(),
              (long long)r.params.param_count(), hex8(checkpoint_digest(r.params)).c_str(),
              seconds_since(t0));
  if (r.best_val_step >= 0)
    std::printf("best validation %.4f bits/subpixel at step %d\n", r.best_val_bpsp,
                r.best_val_step);
  if (r.aborted_non_finite)
    std::fprintf(stderr, "warning: training stopped early on a non-finite loss\n");
  return 0;
}

int cmd_encode(const std::string& model_path, const std::string& input,
               const std::string& output, int patch, bool adapt, const AdaptOpts& ao,
               const std::string& report_path, int threads) {
  auto t0 = Clock::now();
  std::array<uint8_t, 8> model_digest{};
  ModelParams<float> base = load_checkpoint(model_path, &model_digest);
  Image8 img = read_image(input);
  if (img.channels != base.cfg.channels)
    throw ConfigError("image has " + std::to_string(img.channels) +
                      " channels but the model expects " +
                      std::to_string(base.cfg.channels));
  if (patch < 1 || patch > 65535) throw ConfigError("patch size out of range");

  Container c;
  c.hdr.width = uint32_t(img.width);
  c.hdr.height = uint32_t(img.height);
  c.hdr.channels = uint8_t(img.channels);
  c.hdr.patch = uint16_t(patch);
  c.hdr.model_digest = model_digest;

  double weight_bits = 0;
  ModelParams<float> coder = base;
  if (adapt) {
    AdapterConfig acfg = ao.config();
    try {
      AdaptOutcome res = rpft_finetune(img, base, patch, acfg, threads);
      WeightPrior prior = acfg.prior();
      c.weight_bytes = encode_weights(res.phi_int, prior);
      c.weight_count = uint32_t(res.phi_int.size());
      c.hdr.adapted = true;
      c.hdr.adapter_digest = acfg.digest();
      coder = merge_adapters(base, weights_from_bins<float>(base.cfg, acfg, res.phi_int));
      weight_bits = double(c.weight_bytes.size()) * 8.0;
      if (!report_path.empty()) {
        std::ofstream rep(report_path, std::ios::trunc);
        if (!rep) throw IoError("cannot open " + report_path + " for writing");
        rep << "step,selected,weight_bits,pixel_bits,total\n";
        for (const auto& row : res.report)
          rep << row.step << ',' << row.selected << ',' << row.weight_bits << ','
              << row.pixel_bits << ',' << row.total << '\n';
      }
    } catch (const NumericFault& e) {
      std::fprintf(stderr, "warning: adaptation failed (%s); storing unadapted stream\n",
                   e.what());
      coder = base;
    }
  }

  c.payloads = encode_patches(img, patch, coder, threads);
  Bytes blob = write_container(c);
  write_file(output, blob);

  double pixel_bits = 0;
  for (const auto& p : c.payloads) pixel_bits += double(p.size()) * 8.0;
  double total_bits = double(blob.size()) * 8.0;
  std::printf("%s: %dx%dx%d -> %zu bytes (%.4f bits/subpixel; weights %.0f bits, pixels %.0f bits) in %.2fs\n",
              output.c_str(), img.width, img.height, img.channels, blob.size(),
              total_bits / double(img.subpixels()), weight_bits, pixel_bits,
              seconds_since(t0));
  return 0;
}

int cmd_decode(const std::string& model_path, const std::string& input,
               const std::string& output, const AdaptOpts& ao, int threads) {
  auto t0 = Clock::now();
  std::array<uint8_t, 8> model_digest{};
  ModelParams<float> base = load_checkpoint(model_path, &model_digest);
  Bytes blob = read_file(input);
  Container c = read_container(blob.data(), blob.size());
  if (c.hdr.model_digest != model_digest)
    throw WrongModelError("container was encoded with a different model (digest " +
                          hex8(c.hdr.model_digest) + ", loaded " + hex8(model_digest) + ")");
  if (int(c.hdr.channels) != base.cfg.channels)
    throw WrongModelError("container channel count does not match the model");

  ModelParams<float> coder = base;
  if (c.hdr.adapted) {
    AdapterConfig acfg = ao.config();
    if (c.hdr.adapter_digest != acfg.digest())
      throw WrongModelError("adapter configuration does not match the container");
    WeightPrior prior = acfg.prior();
    std::vector<int32_t> bins = decode_weights(c.weight_bytes.data(), c.weight_bytes.size(),
                                               int64_t(c.weight_count), prior);
    coder = merge_adapters(base, weights_from_bins<float>(base.cfg, acfg, bins));
  }
  Image8 img = decode_patches(c.payloads, int(c.hdr.width), int(c.hdr.height),
                              int(c.hdr.channels), int(c.hdr.patch), coder, threads);
  write_image(output, img);
  std::printf("%s: %dx%dx%d decoded in %.2fs\n", output.c_str(), img.width, img.height,
              img.channels, seconds_since(t0));
  return 0;
}

int cmd_bench(const std::string& model_path, const std::vector<std::string>& inputs, int patch,
              bool adapt, const AdaptOpts& ao, bool naive_baseline, const std::string& csv_path,
              int threads) {
  ModelParams<float> base = load_checkpoint(model_path, nullptr);
  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + csv_path + " for writing");
    csv << "image,width,height,bpsp,encode_s,decode_s";
    if (adapt) csv << ",adapted_bpsp,adapt_s";
    if (naive_baseline) csv << ",naive_encode_s,speedup";
    csv << '\n';
  }

  double sum_bpsp = 0, sum_adapted = 0;
  int count = 0;
  for (const auto& path : inputs) {
   try {
    Image8 img = read_image(path);
    if (img.channels != base.cfg.channels)
      throw ConfigError(path + ": channel count does not match the model");
    auto t0 = Clock::now();
    auto payloads = encode_patches(img, patch, base, threads);
    double enc_s = seconds_since(t0);
    double bytes = 0;
    for (const auto& p : payloads) bytes += double(p.size());
    double bpsp = bytes * 8.0 / double(img.subpixels());

    t0 = Clock::now();
    Image8 back = decode_patches(payloads, img.width, img.height, img.channels, patch, base,
                                 threads);
    double dec_s = seconds_since(t0);
    if (!back.same_pixels(img)) throw NumericFault(path + ": decode mismatch");

    double adapted_bpsp = 0, adapt_s = 0;
    if (adapt) {
      AdapterConfig acfg = ao.config();
      t0 = Clock::now();
      AdaptOutcome res = rpft_finetune(img, base, patch, acfg, threads);
      ModelParams<float> merged =
          merge_adapters(base, weights_from_bins<float>(base.cfg, acfg, res.phi_int));
      auto adapted_payloads = encode_patches(img, patch, merged, threads);
      adapt_s = seconds_since(t0);
      double ab = 0;
      for (const auto& p : adapted_payloads) ab += double(p.size());
      WeightPrior prior = acfg.prior();
      Bytes wb = encode_weights(res.phi_int, prior);
      adapted_bpsp = (ab + double(wb.size())) * 8.0 / double(img.subpixels());
      sum_adapted += adapted_bpsp;
    }

    double naive_s = 0;
    if (naive_baseline) {
      t0 = Clock::now();
      for (const auto& r : tile_rects(img.width, img.height, patch)) {
        Bytes nb = naive_encode_patch(crop_image(img, r.x0, r.y0, r.w, r.h), base);
        (void)nb;
      }
      naive_s = seconds_since(t0);
    }

    std::printf("%s: %.4f bpsp, encode %.2fs, decode %.2fs", path.c_str(), bpsp, enc_s, dec_s);
    if (adapt) std::printf(", adapted %.4f bpsp (%.2fs)", adapted_bpsp, adapt_s);
    if (naive_baseline) std::printf(", naive %.2fs (%.1fx)", naive_s, naive_s / enc_s);
    std::printf("\n");
    if (csv.is_open()) {
      csv << path << ',' << img.width << ',' << img.height << ',' << bpsp << ',' << enc_s << ','
          << dec_s;
      if (adapt) csv << ',' << adapted_bpsp << ',' << adapt_s;
      if (naive_baseline) csv << ',' << naive_s << ',' << (naive_s / enc_s);
      csv << '\n';
    }
    sum_bpsp += bpsp;
    count++;
   } catch (const Error& e) {
    std::fprintf(stderr, "warning: %s failed (%s); continuing\n", path.c_str(), e.what());
   }
  }
  if (count > 1) {
    std::printf("mean: %.4f bpsp", sum_bpsp / count);
    if (adapt) std::printf(", adapted %.4f bpsp", sum_adapted / count);
    std::printf("\n");
    if (csv.is_open()) {
      csv << "mean,,," << (sum_bpsp / count) << ",,";
      if (adapt) csv << ',' << (sum_adapted / count) << ',';
      if (naive_baseline) csv << ",,";
      csv << '\n';
    }
  }
  return 0;
}

int cmd_inspect(const std::string& input) {
  Bytes blob = read_file(input);
  Container c = read_container(blob.data(), blob.size());
  std::printf("%s: %zu bytes\n", input.c_str(), blob.size());
  std::printf("  image: %ux%u, %d channel(s), patch %u (%d patches)\n", c.hdr.width,
              c.hdr.height, int(c.hdr.channels), unsigned(c.hdr.patch), c.hdr.patch_count());
  std::printf("  model digest: %s\n", hex8(c.hdr.model_digest).c_str());
  if (c.hdr.adapted) {
    std::printf("  adapter digest: %s\n", hex8(c.hdr.adapter_digest).c_str());
    std::printf("  weights: %u bins in %zu bytes\n", c.weight_count, c.weight_bytes.size());
  } else {
    std::printf("  not adapted\n");
  }
  size_t px = 0;
  for (const auto& p : c.payloads) px += p.size();
  std::printf("  pixel payloads: %zu bytes total\n", px);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lossless learned image codec with per-image adapted entropy models"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (or CALLIC_THREADS)");

  // pretrain
  auto* sp = app.add_subcommand("pretrain", "Train a base model");
  std::vector<std::string> train_inputs;
  int synth = 0, synth_size = 96;
  ModelOpts mo;
  TrainConfig tcfg;
  std::string out_path = "model.ckpt", log_path;
  sp->add_option("inputs", train_inputs, "Training images (png/ppm/pgm)");
  sp->add_option("--synth", synth, "Add N procedural training images");
  sp->add_option("--synth-size", synth_size, "Procedural image side length");
  mo.attach(sp);
  sp->add_option("--patch-size", tcfg.patch, "Training patch size");
  sp->add_option("--batch", tcfg.batch, "Batch size");
  sp->add_option("--lr", tcfg.lr, "Learning rate");
  sp->add_option("--steps", tcfg.steps, "Training steps");
  sp->add_option("--seed", tcfg.seed, "RNG seed");
  sp->add_option("--val-frac", tcfg.val_frac, "Validation fraction");
  sp->add_option("--val-interval", tcfg.val_interval, "Steps between validations");
  sp->add_option("--out", out_path, "Checkpoint path")->required();
  sp->add_option("--log", log_path, "Training log CSV path");

  // encode
  auto* se = app.add_subcommand("encode", "Compress an image");
  std::string enc_model, enc_input, enc_output, report_path;
  int enc_patch = 64;
  bool do_adapt = false;
  AdaptOpts ao;
  se->add_option("--model", enc_model, "Checkpoint path")->required();
  se->add_option("input", enc_input, "Image to compress")->required();
  se->add_option("--out", enc_output, "Output bitstream path")->required();
  se->add_option("--patch-size", enc_patch, "Patch size");
  se->add_flag("--adapt", do_adapt, "Fine-tune per-image weight increments");
  ao.attach(se);
  se->add_option("--report", report_path, "Adaptation report CSV path");

  // decode
  auto* sd = app.add_subcommand("decode", "Decompress a bitstream");
  std::string dec_model, dec_input, dec_output;
  AdaptOpts dec_ao;
  sd->add_option("--model", dec_model, "Checkpoint path")->required();
  sd->add_option("input", dec_input, "Bitstream to decompress")->required();
  sd->add_option("--out", dec_output, "Output image path")->required();
  dec_ao.attach(sd);

  // bench
  auto* sb = app.add_subcommand("bench", "Measure rate and speed on images");
  std::string bench_model, csv_path;
  std::vector<std::string> bench_inputs;
  int bench_patch = 64;
  bool bench_adapt = false, naive_baseline = false;
  AdaptOpts bo;
  sb->add_option("--model", bench_model, "Checkpoint path")->required();
  sb->add_option("inputs", bench_inputs, "Images");
  sb->add_option("--patch-size", bench_patch, "Patch size");
  sb->add_flag("--adapt", bench_adapt, "Also measure adapted rate");
  bo.attach(sb);
  sb->add_flag("--naive-baseline", naive_baseline, "Also time full-recompute encoding");
  sb->add_option("--csv", csv_path, "Per-image CSV path");

  // inspect
  auto* si = app.add_subcommand("inspect", "Print bitstream metadata");
  std::string ins_input;
  si->add_option("input", ins_input, "Bitstream path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (threads < 1) throw ConfigError("--threads must be >= 1");
    if (sp->parsed())
      return cmd_pretrain(train_inputs, synth, synth_size, mo, tcfg, out_path, log_path,
                          threads);
    if (se->parsed()) {
      if (do_adapt && ao.steps < 1) throw ConfigError("--adapt requires --steps >= 1");
      return cmd_encode(enc_model, enc_input, enc_output, enc_patch, do_adapt, ao, report_path,
                        threads);
    }
    if (sd->parsed()) return cmd_decode(dec_model, dec_input, dec_output, dec_ao, threads);
    if (sb->parsed())
      return cmd_bench(bench_model, bench_inputs, bench_patch, bench_adapt, bo, naive_baseline,
                       csv_path, threads);
    if (si->parsed()) return cmd_inspect(ins_input);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const WrongModelError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericFault& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 6;
  }
  return 1;
}
