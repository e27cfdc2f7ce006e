// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "callic/model.hpp"

namespace callic {

/// Checkpoint format: "MGCF" magic, a version byte, six little-endian u32
/// config fields (depth, dim, kernel, mixtures, mlp_ratio, channels), all
/// parameter tensors as little-endian f32 in declaration order, and a
/// trailing 8-byte truncated SHA-256 of everything before it. The digest is
/// the checkpoint's identity inside the container format.
inline constexpr uint8_t kCheckpointVersion = 1;

Bytes serialize_checkpoint(const ModelParams<float>& p);
ModelParams<float> parse_checkpoint(const uint8_t* data, size_t size,
                                    std::array<uint8_t, 8>* digest_out = nullptr);

void save_checkpoint(const std::string& path, const ModelParams<float>& p);
ModelParams<float> load_checkpoint(const std::string& path,
                                   std::array<uint8_t, 8>* digest_out = nullptr);

std::array<uint8_t, 8> checkpoint_digest(const ModelParams<float>& p);

}  // namespace callic
