// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace callic {

using Bytes = std::vector<uint8_t>;

// Error classes map 1:1 onto CLI exit codes (see tools/callic.cpp).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : Error {  // malformed/truncated streams, bad magic/version
  using Error::Error;
};
struct WrongModelError : Error {  // digest mismatch between stream and local state
  using Error::Error;
};
struct NumericFault : Error {  // NaN/Inf surfaced by a forward pass
  using Error::Error;
};
struct ConfigError : Error {  // invalid configuration or shape mismatch
  using Error::Error;
};

/// Deterministic RNG. The engine (mt19937_64) is fully specified by the
/// standard; the derived draws below avoid std::*_distribution, whose
/// output is implementation-defined. Identical seeds give identical
/// sequences on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no caching, two draws per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t below(uint64_t n) {
    return uint64_t((static_cast<unsigned __int128>(bits()) * n) >> 64);
  }

 private:
  std::mt19937_64 eng_;
};

/// Run fn(i) for i in [0, n). With threads <= 1 this is a plain loop.
/// Work items must be independent; each writes only its own outputs, so
/// results do not depend on the thread count.
template <typename Fn>
void parallel_for(int64_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = int(std::min<int64_t>(threads, n));
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        int64_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline double log2_of(double x) { return std::log2(x); }

constexpr double kLn2 = 0.6931471805599453094;

}  // namespace callic
