// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>

#include "callic/common.hpp"

namespace callic {

/// Little-endian byte stream helpers shared by the on-disk formats.
struct WireWriter {
  Bytes out;

  void u8(uint8_t v) { out.push_back(v); }
  void u16(uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void bytes(const uint8_t* p, size_t n) { out.insert(out.end(), p, p + n); }
};

struct WireReader {
  const uint8_t* p = nullptr;
  const uint8_t* end = nullptr;

  WireReader(const uint8_t* data, size_t size) : p(data), end(data + size) {}

  size_t remaining() const { return size_t(end - p); }
  void need(size_t n) const {
    if (remaining() < n) throw FormatError("truncated stream");
  }
  uint8_t u8() {
    need(1);
    return *p++;
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(p[0]) | uint16_t(p[1]) << 8;
    p += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void bytes(uint8_t* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
  }
};

}  // namespace callic
