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

// Oracle suites shared by the `selfcheck` command: finite differences of the
// surrogate against the quantizer backward, Monte-Carlo stochastic
// quantization against the surrogate, and popcount arithmetic against
// brute-force integer products.

#include <cstdint>
#include <string>
#include <vector>

#include "n2uq/activation_quantizer.hpp"
#include "n2uq/stochastic.hpp"

namespace n2uq {

// start ~ U(-1, 1), widths ~ U(0.05, 1), beta1 and beta2 ~ U(0.5, 2).
QuantParams<double> random_quant_params(int bits, CounterRng& rng);

// Input x whose scaled value beta1*x lies in [d_0 - 0.5, d_L + 0.5] and at
// least `margin` away from every segment end and cut point.
double sample_off_boundary(const QuantParams<double>& p, CounterRng& rng, double margin = 1e-3);

struct SuiteResult {
  std::string name;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  bool passed = false;
};

struct SelfcheckOptions {
  std::uint64_t seed = 7;
  std::size_t fd_points = 200;          // per (bit-width, parameter set)
  std::uint64_t mc_trials = 100000;     // per grid point
  std::size_t mc_grid = 21;
  std::size_t bitwise_pairs = 2000;
};

SuiteResult check_gste_gradients(const SelfcheckOptions& opt);
SuiteResult check_ste_degeneration(const SelfcheckOptions& opt);
SuiteResult check_stochastic_expectation(const SelfcheckOptions& opt);
SuiteResult check_bitwise_exactness(const SelfcheckOptions& opt);

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opt);

}  // namespace n2uq
