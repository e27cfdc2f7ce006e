// Copyright (c) the callic authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "callic/weight_prior.hpp"
#include "test_util.hpp"

using namespace callic;
using testutil::rel_err;

namespace {

void check_valid(const QuantizedCDF& cdf, size_t n) {
  REQUIRE(cdf.c.size() == n + 1);
  CHECK(cdf.c.front() == 0);
  CHECK(cdf.c.back() == kProbTotal);
  for (size_t i = 1; i < cdf.c.size(); ++i) CHECK(cdf.c[i] > cdf.c[i - 1]);  // freq >= 1
}

std::vector<double> random_pmf(int n, Rng& rng, double temper) {
  std::vector<double> p(static_cast<size_t>(n));
  double sum = 0;
  for (auto& v : p) {
    v = std::pow(rng.uniform() + 1e-9, temper);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

TEST_CASE("cdf quantisation hand cases") {
  {
    QuantizedCDF cdf = quantize_cdf({0.5, 0.25, 0.25});
    CHECK(cdf.freq(0) == 32768);
    CHECK(cdf.freq(1) == 16384);
    CHECK(cdf.freq(2) == 16384);
    CHECK(cdf.cum(1) == 32768);
  }
  {
    QuantizedCDF cdf = quantize_cdf({1.0});
    CHECK(cdf.size() == 1);
    CHECK(cdf.freq(0) == kProbTotal);
  }
  {
    // A vanishing bin keeps one count; the dominant bin pays for it.
    QuantizedCDF cdf = quantize_cdf({1e-18, 1.0 - 1e-18});
    CHECK(cdf.freq(0) == 1);
    CHECK(cdf.freq(1) == kProbTotal - 1);
  }
  {
    // Equal thirds: 65536/3 leaves remainder 1, which the lowest index wins.
    QuantizedCDF cdf = quantize_cdf({1.0 / 3, 1.0 / 3, 1.0 / 3});
    CHECK(cdf.freq(0) == 21846);
    CHECK(cdf.freq(1) == 21845);
    CHECK(cdf.freq(2) == 21845);
  }
  CHECK_THROWS_AS(quantize_cdf({}), ConfigError);
  CHECK_THROWS_AS(quantize_cdf({0.5, -0.1, 0.6}), ConfigError);
  CHECK_THROWS_AS(quantize_cdf({0.5, std::nan(""), 0.5}), ConfigError);
}

TEST_CASE("cdf quantisation invariants on random inputs") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 1 + int(rng.below(300));
    auto pmf = random_pmf(n, rng, trial % 2 ? 1.0 : 6.0);
    QuantizedCDF cdf = quantize_cdf(pmf);
    check_valid(cdf, size_t(n));
    // find() inverts cum ranges.
    for (int probe = 0; probe < 16; ++probe) {
      uint32_t v = uint32_t(rng.below(kProbTotal));
      int s = cdf.find(v);
      CHECK(cdf.cum(s) <= v);
      CHECK(v < cdf.cum(s) + cdf.freq(s));
    }
  }
}

TEST_CASE("range coder roundtrips") {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + int(rng.below(250));
    QuantizedCDF cdf = quantize_cdf(random_pmf(n, rng, 4.0));
    const int64_t count = trial == 0 ? 0 : int64_t(rng.below(3000));
    std::vector<int> syms(static_cast<size_t>(count));
    // Skew draws toward low symbols so frequencies vary.
    for (auto& s : syms) s = cdf.find(uint32_t(rng.below(kProbTotal)));

    Bytes data = encode_symbols(syms, [&](int64_t) -> const QuantizedCDF& { return cdf; });
    auto back = decode_symbols(data.data(), data.size(), count,
                               [&](int64_t) -> const QuantizedCDF& { return cdf; });
    CHECK(back == syms);
  }
}

TEST_CASE("range coder with position-dependent tables") {
  Rng rng(3);
  std::vector<QuantizedCDF> tables;
  for (int i = 0; i < 7; ++i) tables.push_back(quantize_cdf(random_pmf(50 + i, rng, 3.0)));
  auto provider = [&](int64_t i) -> const QuantizedCDF& {
    return tables[size_t(i % 7)];
  };
  std::vector<int> syms(500);
  for (size_t i = 0; i < syms.size(); ++i)
    syms[i] = int(rng.below(uint64_t(tables[i % 7].size())));
  Bytes data = encode_symbols(syms, provider);
  auto back = decode_symbols(data.data(), data.size(), int64_t(syms.size()), provider);
  CHECK(back == syms);
}

TEST_CASE("stream length tracks the quantised entropy") {
  Rng rng(4);
  for (double temper : {1.0, 4.0, 10.0}) {
    CAPTURE(temper);
    QuantizedCDF cdf = quantize_cdf(random_pmf(256, rng, temper));
    const int64_t count = 10000;
    std::vector<int> syms(static_cast<size_t>(count));
    for (auto& s : syms) s = cdf.find(uint32_t(rng.below(kProbTotal)));
    double ideal_bits = 0;
    for (int s : syms) ideal_bits += -std::log2(double(cdf.freq(s)) / kProbTotal);
    Bytes data = encode_symbols(syms, [&](int64_t) -> const QuantizedCDF& { return cdf; });
    double actual_bits = double(data.size()) * 8.0;
    CHECK(actual_bits >= ideal_bits - 1);  // can't beat the ideal
    CHECK(actual_bits <= ideal_bits * 1.01 + 128.0);
  }
}

TEST_CASE("uniform table costs eight bits per symbol") {
  std::vector<double> pmf(256, 1.0 / 256);
  QuantizedCDF cdf = quantize_cdf(pmf);
  for (int s = 0; s < 256; ++s) CHECK(cdf.freq(s) == 256);
  Rng rng(5);
  std::vector<int> syms(4096);
  for (auto& s : syms) s = int(rng.below(256));
  Bytes data = encode_symbols(syms, [&](int64_t) -> const QuantizedCDF& { return cdf; });
  CHECK(data.size() >= 4096);
  CHECK(data.size() <= 4096 + 16);
}

TEST_CASE("truncated streams are detected") {
  Rng rng(6);
  QuantizedCDF cdf = quantize_cdf(random_pmf(100, rng, 2.0));
  std::vector<int> syms(2000);
  for (auto& s : syms) s = cdf.find(uint32_t(rng.below(kProbTotal)));
  Bytes data = encode_symbols(syms, [&](int64_t) -> const QuantizedCDF& { return cdf; });
  Bytes cut(data.begin(), data.begin() + ptrdiff_t(data.size() / 2));
  CHECK_THROWS_AS(decode_symbols(cut.data(), cut.size(), int64_t(syms.size()),
                                 [&](int64_t) -> const QuantizedCDF& { return cdf; }),
                  FormatError);
  CHECK_THROWS_AS(RangeDecoder(nullptr, 0), FormatError);
}

TEST_CASE("weight prior closed-form values") {
  WeightPrior prior;  // step = scale = 0.05
  // P(0) = sigma(w/2s) - sigma(-w/2s) = 2 sigma(0.5) - 1.
  const double expect0 = 2.0 / (1.0 + std::exp(-0.5)) - 1.0;
  CHECK(rel_err(prior.pmf_at(0), expect0) < 1e-12);
  CHECK(rel_err(expect0, 0.24491866) < 1e-7);
  CHECK(prior.pmf_at(5) == prior.pmf_at(-5));  // symmetric
  CHECK(prior.pmf_at(1) < prior.pmf_at(0));

  auto pmf = prior.pmf();
  CHECK(int(pmf.size()) == prior.alphabet());
  double sum = 0;
  for (double v : pmf) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-9);  // absorbing tails close the mass

  // Interior bins: difference of logistic CDFs around k*step.
  for (int k : {1, 2, 10, 100}) {
    double hi = 1.0 / (1.0 + std::exp(-(k * 0.05 + 0.025) / 0.05));
    double lo = 1.0 / (1.0 + std::exp(-(k * 0.05 - 0.025) / 0.05));
    CHECK(rel_err(prior.pmf_at(k), hi - lo) < 1e-9);
  }
  CHECK(rel_err(prior.bits(0), -std::log2(expect0)) < 1e-12);
  CHECK_THROWS_AS(prior.pmf_at(256), ConfigError);
  CHECK_THROWS_AS(prior.pmf_at(-256), ConfigError);
}

TEST_CASE("weight stream roundtrip and rate") {
  WeightPrior prior;
  Rng rng(7);
  std::vector<int32_t> ks(5000);
  for (auto& k : ks) {
    // Roughly logistic-shaped draws, clamped to the alphabet.
    double v = rng.normal() * 2.5;
    k = int32_t(std::clamp<long long>(std::llround(v), -prior.k_max, prior.k_max));
  }
  ks[0] = -prior.k_max;
  ks[1] = prior.k_max;
  ks[2] = 0;
  Bytes data = encode_weights(ks, prior);
  auto back = decode_weights(data.data(), data.size(), int64_t(ks.size()), prior);
  CHECK(back == ks);

  double ideal = 0;
  for (int32_t k : ks) ideal += prior.bits(k);
  CHECK(double(data.size()) * 8.0 <= ideal * 1.01 + 128.0);
}
