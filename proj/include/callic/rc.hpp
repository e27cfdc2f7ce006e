// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

#include "callic/common.hpp"

namespace callic {

/// Cumulative frequency table over an arbitrary alphabet, quantised to a
/// fixed total of 65536 so the coder renormalises with shifts. c[0] = 0,
/// c[n] = 65536, every symbol keeps a frequency of at least one count.
struct QuantizedCDF {
  std::vector<uint32_t> c;

  int size() const { return int(c.size()) - 1; }
  uint32_t cum(int s) const { return c[size_t(s)]; }
  uint32_t freq(int s) const { return c[size_t(s) + 1] - c[size_t(s)]; }
  /// Symbol whose slot contains cumulative value v (0 <= v < 65536).
  int find(uint32_t v) const;
};

/// Largest-remainder apportioning of `pmf` onto 65536 counts. Zero-count
/// bins are lifted to one count first; any resulting surplus is taken back
/// from the largest bins; remaining deficit goes to the largest fractional
/// remainders. All ties break toward the lower index.
QuantizedCDF quantize_cdf(const std::vector<double>& pmf);

inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbTotal = 1u << kProbBits;

/// Carry-free byte-renormalising range coder on 64-bit state. Frequencies
/// are 16-bit (total 65536), so the per-symbol range split is a shift.
class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq);
  void encode(const QuantizedCDF& cdf, int symbol) { encode(cdf.cum(symbol), cdf.freq(symbol)); }
  /// Flushes the final state; the encoder must not be reused afterwards.
  Bytes finish();

 private:
  uint64_t low_ = 0;
  uint64_t range_ = ~0ull;
  Bytes out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size);

  /// Cumulative value of the next symbol; resolve it with QuantizedCDF::find,
  /// then commit with decode_update using that symbol's slot.
  uint32_t decode_cum();
  void decode_update(uint32_t cum, uint32_t freq);
  int decode_symbol(const QuantizedCDF& cdf) {
    int s = cdf.find(decode_cum());
    decode_update(cdf.cum(s), cdf.freq(s));
    return s;
  }

 private:
  uint8_t next_byte();
  uint64_t low_ = 0;
  uint64_t range_ = ~0ull;
  uint64_t code_ = 0;
  const uint8_t* p_ = nullptr;
  const uint8_t* end_ = nullptr;
};

using CdfProvider = std::function<const QuantizedCDF&(int64_t)>;

/// Convenience wrappers for streams whose tables depend only on the symbol
/// index (the pixel path drives the coder directly instead).
Bytes encode_symbols(const std::vector<int>& symbols, const CdfProvider& cdf_at);
std::vector<int> decode_symbols(const uint8_t* data, size_t size, int64_t count,
                                const CdfProvider& cdf_at);

}  // namespace callic
