// Copyright 2026 The N2UQ Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Stochastic binarization and per-segment stochastic quantization, used as
// an independent Monte-Carlo oracle for the expectation-based backward of
// the activation quantizer.

#include <cstdint>
#include <limits>

#include "n2uq/activation_quantizer.hpp"

namespace n2uq {

// Counter-based generator: draw k of stream `seed` is splitmix64(seed, k),
// so any draw can be reproduced from (seed, counter) alone.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t next() {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (++counter_);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  result_type operator()() { return next(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

struct StochasticSample {
  std::uint32_t value = 0;
  double probability_low = 1.0;  // probability of the lower of the two candidate levels
  std::uint64_t rng_counter = 0;  // generator position after the draw
};

// +1 with probability clip((1 + x)/2, 0, 1), else -1.
int stochastic_binarize(double x, CounterRng& rng);

// In segment i (d_{i-1} <= x' < d_i) returns code i with probability
// (x' - d_{i-1})/a_i, else i-1; saturates outside [d_0, d_L].
StochasticSample stochastic_quantize_sample(double x, const QuantParams<double>& p, CounterRng& rng);

inline std::uint32_t stochastic_quantize(double x, const QuantParams<double>& p, CounterRng& rng) {
  return stochastic_quantize_sample(x, p, rng).value;
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::uint64_t trials = 0;
};

MonteCarloEstimate mc_expectation(double x, const QuantParams<double>& p, std::uint64_t trials, std::uint64_t seed);

// Hard threshold p_low <= 0.5 on the per-segment probability.
std::uint32_t deterministic_from_threshold(double x, const QuantParams<double>& p);

}  // namespace n2uq
