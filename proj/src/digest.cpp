// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#include "callic/digest.hpp"

#include <openssl/sha.h>

namespace callic {

std::array<uint8_t, 8> digest64(const uint8_t* data, size_t size) {
  unsigned char full[SHA256_DIGEST_LENGTH];
  SHA256(data, size, full);
  std::array<uint8_t, 8> out;
  for (int i = 0; i < 8; ++i) out[size_t(i)] = full[i];
  return out;
}

}  // namespace callic
