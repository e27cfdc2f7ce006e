// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstddef>

namespace callic {

/// First 8 bytes of SHA-256(data); used as a cheap identity for checkpoints
/// and adapter configurations inside the container format.
std::array<uint8_t, 8> digest64(const uint8_t* data, size_t size);

}  // namespace callic
