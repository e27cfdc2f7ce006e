// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "callic/rc.hpp"

namespace callic {

/// Static zero-mean logistic prior over quantised weight bins. Bin k covers
/// (k*step - step/2, k*step + step/2]; the outermost bins absorb the tails.
/// Both sides know the prior from configuration, so no table is transmitted.
struct WeightPrior {
  double step = 0.05;
  double scale = 0.05;
  int k_max = 255;

  WeightPrior() = default;
  WeightPrior(double step_in, double scale_in, int k_max_in)
      : step(step_in), scale(scale_in), k_max(k_max_in) {}

  int alphabet() const { return 2 * k_max + 1; }
  /// P(k) for k in [-k_max, k_max].
  double pmf_at(int32_t k) const;
  std::vector<double> pmf() const;
  /// Ideal code length -log2 P(k) in bits.
  double bits(int32_t k) const;
  const QuantizedCDF& cdf() const;  // built lazily, cached

 private:
  mutable QuantizedCDF cdf_;
};

Bytes encode_weights(const std::vector<int32_t>& ks, const WeightPrior& prior);
std::vector<int32_t> decode_weights(const uint8_t* data, size_t size, int64_t count,
                                    const WeightPrior& prior);

}  // namespace callic
