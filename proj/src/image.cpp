// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#include "callic/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace callic {

Image8 crop_image(const Image8& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height)
    throw ConfigError("crop outside image bounds");
  Image8 out(w, h, img.channels);
  for (int y = 0; y < h; ++y)
    std::memcpy(&out.pixels[size_t(y) * w * img.channels],
                &img.pixels[(size_t(y0 + y) * img.width + x0) * img.channels],
                size_t(w) * img.channels);
  return out;
}

void paste_image(Image8& dst, const Image8& src, int x0, int y0) {
  if (dst.channels != src.channels || x0 + src.width > dst.width || y0 + src.height > dst.height)
    throw ConfigError("paste outside image bounds");
  for (int y = 0; y < src.height; ++y)
    std::memcpy(&dst.pixels[(size_t(y0 + y) * dst.width + x0) * dst.channels],
                &src.pixels[size_t(y) * src.width * src.channels],
                size_t(src.width) * src.channels);
}

// ---------------------------------------------------------------------------
// PNG via the libpng simplified API.
// ---------------------------------------------------------------------------

Image8 read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + png.message);
  const bool colour = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 img(int(png.width), int(png.height), colour ? 3 : 1);
  png_color bg{255, 255, 255};  // alpha, if any, is flattened onto white
  if (!png_image_finish_read(&png, &bg, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError("cannot decode PNG " + path + ": " + png.message);
  }
  return img;
}

void write_png(const std::string& path, const Image8& img) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = png_uint_32(img.width);
  png.height = png_uint_32(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + png.message);
}

// ---------------------------------------------------------------------------
// PPM (P6) / PGM (P5), maxval 255.
// ---------------------------------------------------------------------------

namespace {
int pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one non-negative integer.
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  in >> v;
  if (!in || v < 0) throw FormatError("malformed PNM header");
  return v;
}
}  // namespace

Image8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char p = 0, n = 0;
  in.get(p).get(n);
  if (p != 'P' || (n != '5' && n != '6')) throw FormatError("unsupported PNM type in " + path);
  int w = pnm_token(in), h = pnm_token(in), maxval = pnm_token(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("unsupported PNM geometry in " + path);
  in.get();  // single whitespace after maxval
  Image8 img(w, h, n == '6' ? 3 : 1);
  in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (size_t(in.gcount()) != img.pixels.size()) throw FormatError("truncated PNM " + path);
  return img;
}

void write_pnm(const std::string& path, const Image8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!out) throw IoError("cannot write " + path);
}

namespace {
bool has_suffix(const std::string& s, const char* suf) {
  size_t n = std::strlen(suf);
  if (s.size() < n) return false;
  for (size_t i = 0; i < n; ++i)
    if (std::tolower(s[s.size() - n + i]) != suf[i]) return false;
  return true;
}
}  // namespace

Image8 read_image(const std::string& path) {
  if (has_suffix(path, ".png")) return read_png(path);
  if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) return read_pnm(path);
  throw ConfigError("unsupported image extension: " + path);
}

void write_image(const std::string& path, const Image8& img) {
  if (has_suffix(path, ".png")) return write_png(path, img);
  if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) {
    if (has_suffix(path, ".ppm") != (img.channels == 3))
      throw ConfigError("PNM extension does not match channel count");
    return write_pnm(path, img);
  }
  throw ConfigError("unsupported image extension: " + path);
}

// ---------------------------------------------------------------------------
// Procedural images.
// ---------------------------------------------------------------------------

namespace {

uint8_t clamp_u8(double v) { return uint8_t(std::min(255.0, std::max(0.0, v + 0.5))); }

void box_blur(std::vector<double>& v, int w, int h, int radius) {
  std::vector<double> tmp(v.size());
  // horizontal
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      int n = 0;
      for (int d = -radius; d <= radius; ++d) {
        int xx = x + d;
        if (xx < 0 || xx >= w) continue;
        acc += v[size_t(y) * w + xx];
        n++;
      }
      tmp[size_t(y) * w + x] = acc / n;
    }
  }
  // vertical
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      int n = 0;
      for (int d = -radius; d <= radius; ++d) {
        int yy = y + d;
        if (yy < 0 || yy >= h) continue;
        acc += tmp[size_t(yy) * w + x];
        n++;
      }
      v[size_t(y) * w + x] = acc / n;
    }
  }
}

}  // namespace

Image8 synth_image(SynthKind kind, int w, int h, int channels, uint64_t seed) {
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
  Image8 img(w, h, channels);
  switch (kind) {
    case SynthKind::kConstant: {
      for (int c = 0; c < channels; ++c) {
        uint8_t v = uint8_t(rng.below(256));
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) img.at(y, x, c) = v;
      }
      break;
    }
    case SynthKind::kNoise: {
      for (auto& p : img.pixels) p = uint8_t(rng.below(256));
      break;
    }
    case SynthKind::kGradient: {
      for (int c = 0; c < channels; ++c) {
        double base = rng.uniform(0, 255);
        double gx = rng.uniform(-2.5, 2.5), gy = rng.uniform(-2.5, 2.5);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) img.at(y, x, c) = clamp_u8(base + gx * x + gy * y);
      }
      break;
    }
    case SynthKind::kChecker: {
      int cx = 2 + int(rng.below(13)), cy = 2 + int(rng.below(13));
      int px = int(rng.below(uint64_t(cx))), py = int(rng.below(uint64_t(cy)));
      for (int c = 0; c < channels; ++c) {
        uint8_t a = uint8_t(rng.below(256)), b = uint8_t(rng.below(256));
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            img.at(y, x, c) = (((x + px) / cx + (y + py) / cy) % 2 == 0) ? a : b;
      }
      break;
    }
    case SynthKind::kBlurredNoise: {
      int radius = 1 + int(rng.below(3));
      for (int c = 0; c < channels; ++c) {
        std::vector<double> v(size_t(w) * h);
        for (auto& e : v) e = rng.uniform(0, 255);
        box_blur(v, w, h, radius);
        box_blur(v, w, h, radius);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) img.at(y, x, c) = clamp_u8(v[size_t(y) * w + x]);
      }
      break;
    }
    case SynthKind::kFractal: {
      // Octaves of blurred noise stand in for natural content.
      for (int c = 0; c < channels; ++c) {
        std::vector<double> acc(size_t(w) * h, 128.0);
        double amp = 90.0;
        for (int oct = 0; oct < 3; ++oct) {
          std::vector<double> v(size_t(w) * h);
          for (auto& e : v) e = rng.uniform(-amp, amp);
          box_blur(v, w, h, 1 << (2 - oct));
          for (size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
          amp *= 0.55;
        }
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) img.at(y, x, c) = clamp_u8(acc[size_t(y) * w + x]);
      }
      break;
    }
  }
  return img;
}

std::vector<Image8> synth_corpus(int count, int w, int h, int channels, uint64_t seed,
                                 const std::vector<SynthKind>& kinds) {
  if (kinds.empty()) throw ConfigError("synth_corpus: no kinds");
  std::vector<Image8> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i)
    out.push_back(synth_image(kinds[size_t(i) % kinds.size()], w, h, channels,
                              seed + uint64_t(i) * 1000003ull));
  return out;
}

}  // namespace callic
