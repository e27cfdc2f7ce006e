// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#include "callic/checkpoint.hpp"

#include <fstream>

#include "callic/digest.hpp"
#include "callic/wire.hpp"

namespace callic {

namespace {
constexpr char kMagic[4] = {'M', 'G', 'C', 'F'};
}

Bytes serialize_checkpoint(const ModelParams<float>& p) {
  WireWriter w;
  w.bytes(reinterpret_cast<const uint8_t*>(kMagic), 4);
  w.u8(kCheckpointVersion);
  w.u32(uint32_t(p.cfg.depth));
  w.u32(uint32_t(p.cfg.dim));
  w.u32(uint32_t(p.cfg.kernel));
  w.u32(uint32_t(p.cfg.mixtures));
  w.u32(uint32_t(p.cfg.mlp_ratio));
  w.u32(uint32_t(p.cfg.channels));
  const_cast<ModelParams<float>&>(p).for_each_tensor(
      [&](const Tensor<float>& t, const std::string&) {
        for (int64_t i = 0; i < t.numel(); ++i) w.f32(t[i]);
      });
  auto d = digest64(w.out.data(), w.out.size());
  w.bytes(d.data(), d.size());
  return w.out;
}

ModelParams<float> parse_checkpoint(const uint8_t* data, size_t size,
                                    std::array<uint8_t, 8>* digest_out) {
  if (size < 4 + 1 + 24 + 8) throw FormatError("checkpoint too short");
  WireReader r(data, size);
  char magic[4];
  r.bytes(reinterpret_cast<uint8_t*>(magic), 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint file");
  uint8_t version = r.u8();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  cfg.depth = int(r.u32());
  cfg.dim = int(r.u32());
  cfg.kernel = int(r.u32());
  cfg.mixtures = int(r.u32());
  cfg.mlp_ratio = int(r.u32());
  cfg.channels = int(r.u32());
  cfg.validate();

  ModelParams<float> p = ModelParams<float>::zeros(cfg);
  const size_t body = size - 8;
  const size_t expected = 4 + 1 + 24 + size_t(cfg.param_count()) * 4;
  if (body != expected) throw FormatError("checkpoint size does not match its configuration");
  p.for_each_tensor([&](Tensor<float>& t, const std::string&) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.f32();
  });

  auto want = digest64(data, body);
  std::array<uint8_t, 8> got;
  r.bytes(got.data(), 8);
  if (want != got) throw FormatError("checkpoint digest mismatch (corrupted file)");
  if (digest_out) *digest_out = got;
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& p) {
  Bytes b = serialize_checkpoint(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
  if (!out) throw IoError("cannot write " + path);
}

ModelParams<float> load_checkpoint(const std::string& path,
                                   std::array<uint8_t, 8>* digest_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(b.data(), b.size(), digest_out);
}

std::array<uint8_t, 8> checkpoint_digest(const ModelParams<float>& p) {
  Bytes b = serialize_checkpoint(p);
  std::array<uint8_t, 8> d;
  std::memcpy(d.data(), b.data() + b.size() - 8, 8);
  return d;
}

}  // namespace callic
