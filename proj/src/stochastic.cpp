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

#include "n2uq/stochastic.hpp"

#include <algorithm>
#include <cmath>

namespace n2uq {

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("CounterRng::below: empty range");
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t v;
  do {
    v = next();
  } while (v >= limit);
  return v % n;
}

int stochastic_binarize(double x, CounterRng& rng) {
  const double p_up = std::clamp((1.0 + x) / 2.0, 0.0, 1.0);
  return rng.uniform() < p_up ? 1 : -1;
}

StochasticSample stochastic_quantize_sample(double x, const QuantParams<double>& p, CounterRng& rng) {
  validate(p);
  const auto d = segment_ends(p);
  const double scaled = p.beta1 * x;
  const int seg = segment_index(scaled, d);
  StochasticSample s;
  if (seg < 1) {
    s.value = 0;
    s.probability_low = 1.0;
  } else if (seg > p.max_code()) {
    s.value = static_cast<std::uint32_t>(p.max_code());
    s.probability_low = 0.0;
  } else {
    const auto i = static_cast<std::size_t>(seg);
    const double p_up = std::clamp((scaled - d[i - 1]) / p.widths[i - 1], 0.0, 1.0);
    s.probability_low = 1.0 - p_up;
    s.value = rng.uniform() < p_up ? static_cast<std::uint32_t>(seg) : static_cast<std::uint32_t>(seg - 1);
  }
  s.rng_counter = rng.counter();
  return s;
}

MonteCarloEstimate mc_expectation(double x, const QuantParams<double>& p, std::uint64_t trials, std::uint64_t seed) {
  if (trials < 1) throw ContractError("mc_expectation: at least one trial required");
  CounterRng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const double v = stochastic_quantize(x, p, rng);
    sum += v;
    sum_sq += v * v;
  }
  MonteCarloEstimate est;
  est.trials = trials;
  est.mean = sum / static_cast<double>(trials);
  if (trials > 1) {
    const double var = std::max(0.0, (sum_sq - sum * est.mean) / static_cast<double>(trials - 1));
    est.std_error = std::sqrt(var / static_cast<double>(trials));
  }
  return est;
}

std::uint32_t deterministic_from_threshold(double x, const QuantParams<double>& p) {
  validate(p);
  const auto d = segment_ends(p);
  const double scaled = p.beta1 * x;
  const int seg = segment_index(scaled, d);
  if (seg < 1) return 0;
  if (seg > p.max_code()) return static_cast<std::uint32_t>(p.max_code());
  const auto i = static_cast<std::size_t>(seg);
  const double p_low = (d[i] - scaled) / p.widths[i - 1];
  return p_low <= 0.5 ? static_cast<std::uint32_t>(seg) : static_cast<std::uint32_t>(seg - 1);
}

}  // namespace n2uq
