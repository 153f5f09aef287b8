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

#include "n2uq/selfcheck.hpp"

#include <algorithm>
#include <cmath>

#include "n2uq/bitwise.hpp"
#include "n2uq/weight_quantizer.hpp"

namespace n2uq {

namespace {

double rel_err(double got, double want) {
  const double scale = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / scale;
}

// L = g_up * beta2 * 2/L * level(beta1 * x) for a single element.
double element_loss(double x, const QuantParams<double>& p, double g_up) {
  return g_up * p.out_scale() * surrogate_level(p.beta1 * x, p);
}

}  // namespace

QuantParams<double> random_quant_params(int bits, CounterRng& rng) {
  QuantParams<double> p = default_params<double>(bits);
  p.start = 2.0 * rng.uniform() - 1.0;
  for (auto& a : p.widths) a = 0.05 + 0.95 * rng.uniform();
  p.beta1 = 0.5 + 1.5 * rng.uniform();
  p.beta2 = 0.5 + 1.5 * rng.uniform();
  return p;
}

double sample_off_boundary(const QuantParams<double>& p, CounterRng& rng, double margin) {
  const auto d = segment_ends(p);
  const auto t = cut_points(p);
  const double lo = d.front() - 0.5, hi = d.back() + 0.5;
  for (;;) {
    const double s = lo + (hi - lo) * rng.uniform();
    bool ok = true;
    for (double e : d) ok = ok && std::abs(s - e) >= margin;
    for (double e : t) ok = ok && std::abs(s - e) >= margin;
    if (ok) return s / p.beta1;
  }
}

SuiteResult check_gste_gradients(const SelfcheckOptions& opt) {
  SuiteResult res{"gste_finite_difference", 0.0, 1e-5, 0, false};
  CounterRng rng(opt.seed);
  const double h = 1e-6;
  for (int bits = 1; bits <= 4; ++bits) {
    for (int set = 0; set < 3; ++set) {
      const QuantParams<double> p = random_quant_params(bits, rng);
      for (std::size_t k = 0; k < opt.fd_points; ++k) {
        const double x = sample_off_boundary(p, rng);
        const double g_up = 0.5 + rng.uniform();
        const Matrix<double> xm = Matrix<double>::Constant(1, 1, x), gm = Matrix<double>::Constant(1, 1, g_up);
        const auto g = quantizer_backward(xm, p, gm, LevelMode::Surrogate);
        auto fd = [&](auto perturb) {
          QuantParams<double> plus = p, minus = p;
          double xp = x, xm = x;
          perturb(plus, xp, h);
          perturb(minus, xm, -h);
          return (element_loss(xp, plus, g_up) - element_loss(xm, minus, g_up)) / (2 * h);
        };
        double worst = rel_err(g.input(0, 0), fd([](auto&, double& xv, double e) { xv += e; }));
        worst = std::max(worst, rel_err(g.start, fd([](auto& q, double&, double e) { q.start += e; })));
        worst = std::max(worst, rel_err(g.beta1, fd([](auto& q, double&, double e) { q.beta1 += e; })));
        worst = std::max(worst, rel_err(g.beta2, fd([](auto& q, double&, double e) { q.beta2 += e; })));
        for (std::size_t i = 0; i < p.widths.size(); ++i) {
          worst = std::max(worst, rel_err(g.widths[i], fd([i](auto& q, double&, double e) { q.widths[i] += e; })));
        }
        res.max_deviation = std::max(res.max_deviation, worst);
        ++res.cases;
      }
    }
  }
  res.passed = res.max_deviation < res.tolerance;
  return res;
}

SuiteResult check_ste_degeneration(const SelfcheckOptions& opt) {
  SuiteResult res{"ste_degeneration", 0.0, 0.0, 0, false};
  CounterRng rng(opt.seed + 1);
  bool exact = true;
  for (int bits = 1; bits <= 4; ++bits) {
    for (double c : {0.25, 2.0 / 3.0, 1.0}) {
      QuantParams<double> p = default_params<double>(bits);
      std::fill(p.widths.begin(), p.widths.end(), c);
      const double top = c * p.max_code();
      for (std::size_t k = 0; k < opt.fd_points; ++k) {
        const double x = sample_off_boundary(p, rng);
        const double ste = (x >= 0.0 && x < top) ? 1.0 / c : 0.0;
        const double got = code_partials(x, p).input;
        exact = exact && got == ste;
        res.max_deviation = std::max(res.max_deviation, std::abs(got - ste));
        ++res.cases;
      }
    }
  }
  res.passed = exact;
  return res;
}

SuiteResult check_stochastic_expectation(const SelfcheckOptions& opt) {
  SuiteResult res{"stochastic_expectation", 0.0, 0.01, 0, false};
  CounterRng rng(opt.seed + 2);
  for (int bits = 1; bits <= 3; ++bits) {
    for (int set = 0; set < 3; ++set) {
      QuantParams<double> p = random_quant_params(bits, rng);
      p.beta1 = 1.0;
      const auto d = segment_ends(p);
      const double lo = d.front() - 1.0, hi = d.back() + 1.0;
      for (std::size_t k = 0; k < opt.mc_grid; ++k) {
        const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(opt.mc_grid - 1);
        const auto est = mc_expectation(x, p, opt.mc_trials, opt.seed * 1000003 + res.cases);
        res.max_deviation = std::max(res.max_deviation, std::abs(est.mean - surrogate_level(x, p)));
        ++res.cases;
      }
    }
  }
  res.passed = res.max_deviation < res.tolerance;
  return res;
}

SuiteResult check_bitwise_exactness(const SelfcheckOptions& opt) {
  SuiteResult res{"bitwise_exactness", 0.0, 1e-9, 0, false};
  CounterRng rng(opt.seed + 3);
  bool exact = true;
  for (std::size_t k = 0; k < opt.bitwise_pairs; ++k) {
    const int m = 1 + static_cast<int>(k % 4), kw = 1 + static_cast<int>((k / 4) % 4);
    const std::size_t len = 1 + rng.below(1024);
    std::vector<std::uint32_t> a(len), w(len);
    std::uint64_t brute = 0;
    for (std::size_t i = 0; i < len; ++i) {
      a[i] = static_cast<std::uint32_t>(rng.below(1u << m));
      w[i] = static_cast<std::uint32_t>(rng.below(1u << kw));
      brute += std::uint64_t{a[i]} * w[i];
    }
    const BitPlanes pa = pack(a, m), pw = pack(w, kw);
    exact = exact && popcount_dot(pa, pw) == brute;

    // Affine bridge against the dequantized real dot product.
    QuantizedWeights<double> q;
    q.bits = kw;
    q.scale = 2.0 / ((1 << kw) - 1);
    q.codes = Eigen::Map<const CodeMatrix>(w.data(), 1, static_cast<Index>(len));
    const double act_scale = (0.5 + 1.5 * rng.uniform()) * 2.0 / ((1 << m) - 1);
    const auto layer = pack_linear(q, m, act_scale);
    double ref = 0.0;
    for (std::size_t i = 0; i < len; ++i) ref += (act_scale * a[i]) * (q.scale * w[i] - 1.0);
    res.max_deviation = std::max(res.max_deviation, std::abs(dot_real(pa, act_scale, layer, 0) - ref));
    ++res.cases;
  }
  res.passed = exact && res.max_deviation < res.tolerance;
  return res;
}

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opt) {
  return {check_gste_gradients(opt), check_ste_degeneration(opt), check_stochastic_expectation(opt),
          check_bitwise_exactness(opt)};
}

}  // namespace n2uq
