// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "callic/common.hpp"

namespace callic {

/// Interleaved 8-bit image, row-major, 1 (grey) or 3 (RGB) channels.
struct Image8 {
  int width = 0, height = 0, channels = 0;
  Bytes pixels;

  Image8() = default;
  Image8(int w, int h, int c) : width(w), height(h), channels(c) {
    pixels.assign(size_t(w) * h * c, 0);
  }
  uint8_t& at(int y, int x, int c) {
    return pixels[(size_t(y) * width + x) * channels + size_t(c)];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[(size_t(y) * width + x) * channels + size_t(c)];
  }
  int64_t subpixels() const { return int64_t(width) * height * channels; }
  bool same_pixels(const Image8& o) const {
    return width == o.width && height == o.height && channels == o.channels &&
           pixels == o.pixels;
  }
};

Image8 crop_image(const Image8& img, int x0, int y0, int w, int h);
void paste_image(Image8& dst, const Image8& src, int x0, int y0);

/// Format chosen by extension: .png, .ppm (RGB), .pgm (grey). PNG sources
/// with an alpha channel are flattened; 16-bit sources are rejected.
Image8 read_image(const std::string& path);
void write_image(const std::string& path, const Image8& img);

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);
Image8 read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image8& img);

// Procedural corpus generation (pretraining and the test suites).
enum class SynthKind { kGradient, kChecker, kBlurredNoise, kFractal, kConstant, kNoise };

Image8 synth_image(SynthKind kind, int w, int h, int channels, uint64_t seed);

/// Mixed corpus: cycles through kinds deterministically by index.
std::vector<Image8> synth_corpus(int count, int w, int h, int channels, uint64_t seed,
                                 const std::vector<SynthKind>& kinds);

}  // namespace callic
