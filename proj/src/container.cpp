// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#include "callic/container.hpp"

#include <cstring>

#include "callic/wire.hpp"

namespace callic {

namespace {
constexpr char kMagic[4] = {'C', 'L', 'L', 'C'};
}

Bytes write_container(const Container& c) {
  const ContainerHeader& h = c.hdr;
  if (h.width == 0 || h.height == 0 || h.patch == 0) throw ConfigError("empty container geometry");
  if (h.channels != 1 && h.channels != 3) throw ConfigError("container channels must be 1 or 3");
  if (int(c.payloads.size()) != h.patch_count())
    throw ConfigError("container payload count does not match geometry");
  if (h.adapted && (c.weight_count == 0 || c.weight_bytes.empty()))
    throw ConfigError("adapted container needs a non-empty weight section");
  WireWriter w;
  w.bytes(reinterpret_cast<const uint8_t*>(kMagic), 4);
  w.u8(kContainerVersion);
  w.u8(h.adapted ? 1 : 0);
  w.u32(h.width);
  w.u32(h.height);
  w.u8(h.channels);
  w.u16(h.patch);
  w.bytes(h.model_digest.data(), 8);
  w.bytes(h.adapter_digest.data(), 8);
  if (h.adapted) {
    w.u32(c.weight_count);
    w.u32(uint32_t(c.weight_bytes.size()));
    w.bytes(c.weight_bytes.data(), c.weight_bytes.size());
  }
  for (const Bytes& p : c.payloads) w.u32(uint32_t(p.size()));
  for (const Bytes& p : c.payloads) w.bytes(p.data(), p.size());
  return w.out;
}

Container read_container(const uint8_t* data, size_t size) {
  WireReader r(data, size);
  char magic[4];
  r.bytes(reinterpret_cast<uint8_t*>(magic), 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a coded image container");
  uint8_t version = r.u8();
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version));
  uint8_t flags = r.u8();
  if (flags & ~1u) throw FormatError("unknown container flags");

  Container c;
  c.hdr.adapted = (flags & 1) != 0;
  c.hdr.width = r.u32();
  c.hdr.height = r.u32();
  c.hdr.channels = r.u8();
  c.hdr.patch = r.u16();
  r.bytes(c.hdr.model_digest.data(), 8);
  r.bytes(c.hdr.adapter_digest.data(), 8);
  if (c.hdr.width == 0 || c.hdr.height == 0) throw FormatError("container has empty geometry");
  if (c.hdr.channels != 1 && c.hdr.channels != 3)
    throw FormatError("container channel count must be 1 or 3");
  if (c.hdr.patch == 0) throw FormatError("container patch extent must be positive");

  if (c.hdr.adapted) {
    c.weight_count = r.u32();
    uint32_t len = r.u32();
    if (c.weight_count == 0 || len == 0)
      throw FormatError("adapted container carries an empty weight section");
    c.weight_bytes.resize(len);
    r.bytes(c.weight_bytes.data(), len);
  }

  const int n = c.hdr.patch_count();
  std::vector<uint32_t> lens(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) lens[size_t(i)] = r.u32();
  c.payloads.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    c.payloads[size_t(i)].resize(lens[size_t(i)]);
    r.bytes(c.payloads[size_t(i)].data(), lens[size_t(i)]);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after container payloads");
  return c;
}

}  // namespace callic
