// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "callic/common.hpp"

namespace callic {

/// One-file bitstream layout (all integers little-endian):
///   magic "CLLC", version u8, flags u8 (bit0: adapted),
///   width u32, height u32, channels u8, patch u16,
///   model digest (8 bytes), adapter-config digest (8 bytes, zero when not
///   adapted) -- a 33-byte fixed header. When adapted, a weight section
///   follows: count u32, byte length u32, entropy-coded weight bins. Then
///   one u32 byte length per patch in row-major order, then the patch
///   payloads back to back.
inline constexpr uint8_t kContainerVersion = 1;

struct ContainerHeader {
  uint32_t width = 0, height = 0;
  uint8_t channels = 0;
  uint16_t patch = 0;
  bool adapted = false;
  std::array<uint8_t, 8> model_digest{};
  std::array<uint8_t, 8> adapter_digest{};

  int patches_x() const { return int((width + patch - 1) / patch); }
  int patches_y() const { return int((height + patch - 1) / patch); }
  int patch_count() const { return patches_x() * patches_y(); }
};

struct Container {
  ContainerHeader hdr;
  uint32_t weight_count = 0;
  Bytes weight_bytes;
  std::vector<Bytes> payloads;  // hdr.patch_count() entries, row-major
};

Bytes write_container(const Container& c);
/// Parses and validates framing only; digest comparison against local state
/// is the caller's job.
Container read_container(const uint8_t* data, size_t size);

}  // namespace callic
