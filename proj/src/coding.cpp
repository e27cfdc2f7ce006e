// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "callic/rc.hpp"
#include "callic/weight_prior.hpp"

namespace callic {

// ---------------------------------------------------------------------------
// CDF quantisation.
// ---------------------------------------------------------------------------

int QuantizedCDF::find(uint32_t v) const {
  auto it = std::upper_bound(c.begin(), c.end(), v);
  return int(it - c.begin()) - 1;
}

QuantizedCDF quantize_cdf(const std::vector<double>& pmf) {
  const int n = int(pmf.size());
  if (n < 1 || n > int(kProbTotal)) throw ConfigError("quantize_cdf: bad alphabet size");
  double sum = 0;
  for (double p : pmf) {
    if (!std::isfinite(p) || p <= 0) throw ConfigError("quantize_cdf: pmf must be positive");
    sum += p;
  }

  std::vector<uint32_t> counts(static_cast<size_t>(n));
  std::vector<double> rem(static_cast<size_t>(n));
  std::vector<uint8_t> lifted(size_t(n), 0);
  int64_t total = 0;
  for (int i = 0; i < n; ++i) {
    double ideal = pmf[size_t(i)] / sum * double(kProbTotal);
    double fl = std::floor(ideal);
    counts[size_t(i)] = uint32_t(fl);
    rem[size_t(i)] = ideal - fl;
    if (counts[size_t(i)] == 0) {
      counts[size_t(i)] = 1;
      lifted[size_t(i)] = 1;
    }
    total += counts[size_t(i)];
  }

  if (total < int64_t(kProbTotal)) {
    // Hand the deficit to the largest remainders, lifted bins last.
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return rem[size_t(a)] > rem[size_t(b)];
    });
    int64_t deficit = int64_t(kProbTotal) - total;
    for (int round = 0; deficit > 0; ++round) {
      for (int i : order) {
        if (round == 0 && lifted[size_t(i)]) continue;
        counts[size_t(i)]++;
        if (--deficit == 0) break;
      }
    }
  } else if (total > int64_t(kProbTotal)) {
    // Lifting zero bins overshot; reclaim from the largest bins.
    int64_t surplus = total - int64_t(kProbTotal);
    while (surplus > 0) {
      int best = -1;
      for (int i = 0; i < n; ++i)
        if (counts[size_t(i)] > 1 && (best < 0 || counts[size_t(i)] > counts[size_t(best)]))
          best = i;
      if (best < 0) throw ConfigError("quantize_cdf: cannot satisfy per-symbol floor");
      uint32_t take = uint32_t(std::min<int64_t>(surplus, counts[size_t(best)] - 1));
      counts[size_t(best)] -= take;
      surplus -= take;
    }
  }

  QuantizedCDF cdf;
  cdf.c.resize(size_t(n) + 1);
  cdf.c[0] = 0;
  for (int i = 0; i < n; ++i) cdf.c[size_t(i) + 1] = cdf.c[size_t(i)] + counts[size_t(i)];
  return cdf;
}

// ---------------------------------------------------------------------------
// Range coder. Carry-free Subbotin construction: `low` never wraps because
// each symbol shrinks low+range, and the small-range rescue clamps range to
// the distance to the next 2^32 boundary (which is non-zero whenever the
// rescue can trigger, since an aligned `low` with range < 2^32 always has a
// settled top byte).
// ---------------------------------------------------------------------------

namespace {
constexpr uint64_t kTop = 1ull << 56;
constexpr uint64_t kBottom = 1ull << 32;
}  // namespace

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
  uint64_t r = range_ >> kProbBits;
  low_ += r * cum;
  range_ = r * freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBottom && ((range_ = (0 - low_) & (kBottom - 1)), true))) {
    out_.push_back(uint8_t(low_ >> 56));
    low_ <<= 8;
    range_ <<= 8;
  }
}

Bytes RangeEncoder::finish() {
  for (int i = 0; i < 8; ++i) {
    out_.push_back(uint8_t(low_ >> 56));
    low_ <<= 8;
  }
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size) : p_(data), end_(data + size) {
  if (size < 8) throw FormatError("range stream truncated");
  for (int i = 0; i < 8; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (p_ == end_) throw FormatError("range stream truncated");
  return *p_++;
}

uint32_t RangeDecoder::decode_cum() {
  uint64_t r = range_ >> kProbBits;
  uint64_t v = (code_ - low_) / r;
  return uint32_t(std::min<uint64_t>(v, kProbTotal - 1));
}

void RangeDecoder::decode_update(uint32_t cum, uint32_t freq) {
  uint64_t r = range_ >> kProbBits;
  low_ += r * cum;
  range_ = r * freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBottom && ((range_ = (0 - low_) & (kBottom - 1)), true))) {
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

Bytes encode_symbols(const std::vector<int>& symbols, const CdfProvider& cdf_at) {
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) enc.encode(cdf_at(int64_t(i)), symbols[i]);
  return enc.finish();
}

std::vector<int> decode_symbols(const uint8_t* data, size_t size, int64_t count,
                                const CdfProvider& cdf_at) {
  RangeDecoder dec(data, size);
  std::vector<int> out(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out[size_t(i)] = dec.decode_symbol(cdf_at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Weight prior.
// ---------------------------------------------------------------------------

namespace {
double sigmoid_stable(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

double WeightPrior::pmf_at(int32_t k) const {
  if (k < -k_max || k > k_max) throw ConfigError("weight bin out of range");
  // Evaluate at |k| so P(k) == P(-k) holds bit for bit, not just in exact
  // arithmetic: the two logistic branches round differently.
  if (k < 0) k = -k;
  double hi = (double(k) * step + step / 2) / scale;
  double lo = (double(k) * step - step / 2) / scale;
  if (k == k_max) return 1.0 - sigmoid_stable(lo);
  return sigmoid_stable(hi) - sigmoid_stable(lo);
}

std::vector<double> WeightPrior::pmf() const {
  std::vector<double> p(static_cast<size_t>(alphabet()));
  for (int k = -k_max; k <= k_max; ++k)
    p[size_t(k + k_max)] = std::max(pmf_at(k), 1e-300);
  return p;
}

double WeightPrior::bits(int32_t k) const { return -std::log2(std::max(pmf_at(k), 1e-300)); }

const QuantizedCDF& WeightPrior::cdf() const {
  if (cdf_.c.empty()) cdf_ = quantize_cdf(pmf());
  return cdf_;
}

Bytes encode_weights(const std::vector<int32_t>& ks, const WeightPrior& prior) {
  const QuantizedCDF& cdf = prior.cdf();
  RangeEncoder enc;
  for (int32_t k : ks) {
    if (k < -prior.k_max || k > prior.k_max) throw ConfigError("weight bin out of range");
    enc.encode(cdf, k + prior.k_max);
  }
  return enc.finish();
}

std::vector<int32_t> decode_weights(const uint8_t* data, size_t size, int64_t count,
                                    const WeightPrior& prior) {
  const QuantizedCDF& cdf = prior.cdf();
  RangeDecoder dec(data, size);
  std::vector<int32_t> out(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i)
    out[size_t(i)] = int32_t(dec.decode_symbol(cdf)) - prior.k_max;
  return out;
}

}  // namespace callic
