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

// Nonuniform-to-uniform activation quantizer.
//
// Input x is scaled by beta1, then split by learnable interval widths
// a_1..a_L (L = 2^n - 1) starting at `start`:
//
//   d_0 = start,  d_i = d_{i-1} + a_i
//
// The forward pass emits integer code i when
//   d_{i-1} + a_i/2 <= beta1*x < d_i + a_{i+1}/2
// and the output value is code * beta2 * 2/L. The backward pass does not
// differentiate the staircase; it differentiates the piecewise-linear
// expectation of the stochastic quantizer
//
//   level(x') = (x' - d_{i-1}) / a_i + i - 1   for d_{i-1} <= x' < d_i
//
// clipped to [0, L]. Slopes are therefore 1/a_i inside segment i, and the
// widths and start point receive gradients through d_{i-1}.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "n2uq/errors.hpp"
#include "n2uq/tensor.hpp"

namespace n2uq {

inline constexpr double kMinIntervalWidth = 1e-3;
inline constexpr int kMaxActivationBits = 16;

using CodeMatrix = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar = double>
struct QuantParams {
  int bits = 2;
  Scalar start = 0;
  std::vector<Scalar> widths;
  Scalar beta1 = 1;
  Scalar beta2 = 1;

  int max_code() const { return (1 << bits) - 1; }
  // Learnable scalars: the widths, start, beta1 and beta2 (2^n + 2 in total).
  std::size_t scalar_count() const { return widths.size() + 3; }
  Scalar out_scale() const { return beta2 * Scalar(2) / static_cast<Scalar>(max_code()); }

  template <typename Other>
  QuantParams<Other> cast() const {
    QuantParams<Other> q;
    q.bits = bits;
    q.start = static_cast<Other>(start);
    q.widths.assign(widths.begin(), widths.end());
    q.beta1 = static_cast<Other>(beta1);
    q.beta2 = static_cast<Other>(beta2);
    return q;
  }
};

template <typename Scalar>
void validate(const QuantParams<Scalar>& p) {
  if (p.bits < 1 || p.bits > kMaxActivationBits) {
    throw ContractError("quantizer: bit-width " + std::to_string(p.bits) + " out of range [1, 16]");
  }
  if (p.widths.size() != static_cast<std::size_t>(p.max_code())) {
    throw ContractError("quantizer: expected " + std::to_string(p.max_code()) + " interval widths, got " +
                        std::to_string(p.widths.size()));
  }
  for (Scalar a : p.widths) {
    if (!(a > 0) || !std::isfinite(static_cast<double>(a))) {
      throw ContractError("quantizer: interval widths must be positive and finite");
    }
  }
  if (!std::isfinite(static_cast<double>(p.start)) || !std::isfinite(static_cast<double>(p.beta1)) ||
      !std::isfinite(static_cast<double>(p.beta2))) {
    throw ContractError("quantizer: non-finite start or scale");
  }
}

template <typename Scalar = double>
QuantParams<Scalar> default_params(int bits) {
  if (bits < 1 || bits > kMaxActivationBits) {
    throw ContractError("default_params: bit-width must be in [1, 16]");
  }
  QuantParams<Scalar> p;
  p.bits = bits;
  p.widths.assign(static_cast<std::size_t>(p.max_code()), Scalar(2) / static_cast<Scalar>(p.max_code()));
  return p;
}

// Applied after every optimizer step. Only the widths are constrained.
template <typename Scalar>
QuantParams<Scalar> clamp_params(QuantParams<Scalar> p) {
  for (auto& a : p.widths) a = std::max(a, static_cast<Scalar>(kMinIntervalWidth));
  return p;
}

// d_0 .. d_L.
template <typename Scalar>
std::vector<Scalar> segment_ends(const QuantParams<Scalar>& p) {
  std::vector<Scalar> d(p.widths.size() + 1);
  d[0] = p.start;
  for (std::size_t i = 0; i < p.widths.size(); ++i) d[i + 1] = d[i] + p.widths[i];
  return d;
}

// Forward switching points T_i = d_{i-1} + a_i/2, i = 1..L.
template <typename Scalar>
std::vector<Scalar> cut_points(const QuantParams<Scalar>& p) {
  const auto d = segment_ends(p);
  std::vector<Scalar> t(p.widths.size());
  for (std::size_t i = 0; i < p.widths.size(); ++i) t[i] = d[i] + p.widths[i] / Scalar(2);
  return t;
}

// Number of cut points <= x' (inputs on a cut point quantize upward).
template <typename Scalar>
std::uint32_t code_from_cuts(Scalar scaled, const std::vector<Scalar>& cuts) {
  return static_cast<std::uint32_t>(std::upper_bound(cuts.begin(), cuts.end(), scaled) - cuts.begin());
}

// 0 left of d_0, i for d_{i-1} <= x' < d_i, L+1 at or right of d_L.
template <typename Scalar>
int segment_index(Scalar scaled, const std::vector<Scalar>& ends) {
  return static_cast<int>(std::upper_bound(ends.begin(), ends.end(), scaled) - ends.begin());
}

template <typename Scalar>
Scalar level_on_segment(Scalar scaled, int segment, const std::vector<Scalar>& ends, const QuantParams<Scalar>& p) {
  const int last = p.max_code();
  if (segment <= 0) return Scalar(0);
  if (segment > last) return static_cast<Scalar>(last);
  const auto i = static_cast<std::size_t>(segment);
  return (scaled - ends[i - 1]) / p.widths[i - 1] + static_cast<Scalar>(segment - 1);
}

// Expectation of the stochastic quantizer at scaled input x' = beta1*x.
template <typename Scalar>
Scalar surrogate_level(Scalar scaled, const QuantParams<Scalar>& p) {
  const auto d = segment_ends(p);
  return level_on_segment(scaled, segment_index(scaled, d), d, p);
}

// Partial derivatives of the surrogate level with respect to the scaled
// input, the start point and each width, at one scaled input value.
template <typename Scalar>
struct CodePartials {
  Scalar input = 0;
  Scalar start = 0;
  std::vector<Scalar> widths;
};

template <typename Scalar>
CodePartials<Scalar> code_partials(Scalar scaled, const QuantParams<Scalar>& p) {
  validate(p);
  const auto d = segment_ends(p);
  CodePartials<Scalar> out;
  out.widths.assign(p.widths.size(), Scalar(0));
  const int seg = segment_index(scaled, d);
  if (seg < 1 || seg > p.max_code()) return out;
  const auto i = static_cast<std::size_t>(seg);
  const Scalar a = p.widths[i - 1];
  out.input = Scalar(1) / a;
  out.start = -Scalar(1) / a;
  for (std::size_t k = 0; k + 1 < i; ++k) out.widths[k] = -Scalar(1) / a;
  out.widths[i - 1] = -(scaled - d[i - 1]) / (a * a);
  return out;
}

template <typename Scalar = double>
struct ActivationCodes {
  CodeMatrix codes;
  int bits = 0;
  Scalar out_scale = 0;

  Matrix<Scalar> dequantize() const { return codes.template cast<Scalar>() * out_scale; }
};

template <typename Scalar>
ActivationCodes<Scalar> quantize_forward(const std::type_identity_t<Matrix<Scalar>>& x, const QuantParams<Scalar>& p) {
  validate(p);
  const auto cuts = cut_points(p);
  ActivationCodes<Scalar> out;
  out.bits = p.bits;
  out.out_scale = p.out_scale();
  out.codes.resize(x.rows(), x.cols());
  for (Index k = 0; k < x.size(); ++k) out.codes.data()[k] = code_from_cuts(p.beta1 * x.data()[k], cuts);
  return out;
}

// Surrogate level (in code units, before output scaling) of every element.
template <typename Scalar>
Matrix<Scalar> surrogate(const std::type_identity_t<Matrix<Scalar>>& x, const QuantParams<Scalar>& p) {
  validate(p);
  const auto d = segment_ends(p);
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index k = 0; k < x.size(); ++k) {
    const Scalar s = p.beta1 * x.data()[k];
    out.data()[k] = level_on_segment(s, segment_index(s, d), d, p);
  }
  return out;
}

// Hard: forward emits integer codes (training and inference).
// Surrogate: forward emits the piecewise-linear expectation, so that the
// backward below is its exact derivative (used by gradient checks).
enum class LevelMode { Hard, Surrogate };

// Values captured at forward time for the backward pass.
template <typename Scalar>
struct QuantizerContext {
  QuantParams<Scalar> params;
  LevelMode mode = LevelMode::Hard;
  Matrix<Scalar> input;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> segment;
  Matrix<Scalar> level;
  bool populated = false;
};

template <typename Scalar>
QuantizerContext<Scalar> save_context(const std::type_identity_t<Matrix<Scalar>>& x, const QuantParams<Scalar>& p,
                                      LevelMode mode = LevelMode::Hard) {
  validate(p);
  QuantizerContext<Scalar> ctx;
  ctx.params = p;
  ctx.mode = mode;
  ctx.input = x;
  ctx.segment.resize(x.rows(), x.cols());
  ctx.level.resize(x.rows(), x.cols());
  const auto d = segment_ends(p);
  const auto cuts = cut_points(p);
  for (Index k = 0; k < x.size(); ++k) {
    const Scalar s = p.beta1 * x.data()[k];
    const int seg = segment_index(s, d);
    ctx.segment.data()[k] = seg;
    ctx.level.data()[k] = mode == LevelMode::Hard ? static_cast<Scalar>(code_from_cuts(s, cuts))
                                                  : level_on_segment(s, seg, d, p);
  }
  ctx.populated = true;
  return ctx;
}

template <typename Scalar>
struct QuantizerGradients {
  Matrix<Scalar> input;
  std::vector<Scalar> widths;
  Scalar start = 0;
  Scalar beta1 = 0;
  Scalar beta2 = 0;
};

// Gradients of L with respect to the quantizer input and parameters, where
// the quantizer output is y = out_scale * level and g_up = dL/dy.
template <typename Scalar>
QuantizerGradients<Scalar> quantizer_backward(const QuantizerContext<Scalar>& ctx, const std::type_identity_t<Matrix<Scalar>>& g_up) {
  if (!ctx.populated) throw ContractError("quantizer_backward: forward context missing");
  if (g_up.rows() != ctx.input.rows() || g_up.cols() != ctx.input.cols()) {
    throw DimensionError("quantizer_backward: upstream gradient shape differs from input");
  }
  const auto& p = ctx.params;
  const int last = p.max_code();
  const auto d = segment_ends(p);
  const double out_scale = static_cast<double>(p.out_scale());
  const double level_scale = 2.0 / last;

  // Per-segment totals of g/a_i and g*(x'-d_{i-1})/a_i^2; the width and
  // start gradients are suffix sums of these.
  std::vector<double> slope_sum(static_cast<std::size_t>(last) + 1, 0.0);
  std::vector<double> offset_sum(static_cast<std::size_t>(last) + 1, 0.0);
  double g_beta1 = 0.0, g_beta2 = 0.0;

  QuantizerGradients<Scalar> out;
  out.input = Matrix<Scalar>::Zero(g_up.rows(), g_up.cols());
  for (Index k = 0; k < g_up.size(); ++k) {
    const double g = static_cast<double>(g_up.data()[k]);
    g_beta2 += g * level_scale * static_cast<double>(ctx.level.data()[k]);
    const int seg = ctx.segment.data()[k];
    if (seg < 1 || seg > last) continue;
    const auto i = static_cast<std::size_t>(seg);
    const double a = static_cast<double>(p.widths[i - 1]);
    const double x = static_cast<double>(ctx.input.data()[k]);
    const double scaled = static_cast<double>(p.beta1) * x;
    const double t = g * out_scale / a;
    out.input.data()[k] = static_cast<Scalar>(t * static_cast<double>(p.beta1));
    g_beta1 += t * x;
    slope_sum[i] += t;
    offset_sum[i] += t * (scaled - static_cast<double>(d[i - 1])) / a;
  }

  out.widths.assign(p.widths.size(), Scalar(0));
  double later = 0.0;
  for (std::size_t i = static_cast<std::size_t>(last); i >= 1; --i) {
    out.widths[i - 1] = static_cast<Scalar>(-offset_sum[i] - later);
    later += slope_sum[i];
  }
  out.start = static_cast<Scalar>(-later);
  out.beta1 = static_cast<Scalar>(g_beta1);
  out.beta2 = static_cast<Scalar>(g_beta2);
  return out;
}

template <typename Scalar>
QuantizerGradients<Scalar> quantizer_backward(const std::type_identity_t<Matrix<Scalar>>& x, const QuantParams<Scalar>& p,
                                              const std::type_identity_t<Matrix<Scalar>>& g_up, LevelMode mode = LevelMode::Hard) {
  return quantizer_backward(save_context(x, p, mode), g_up);
}

// Learnable quantizer state as graph leaves: start and the betas are 1x1,
// widths is 1xL.
template <typename Scalar>
struct QuantizerVars {
  Var<Scalar> start;
  Var<Scalar> widths;
  Var<Scalar> beta1;
  Var<Scalar> beta2;
};

template <typename Scalar>
QuantParams<Scalar> params_from_vars(const QuantizerVars<Scalar>& q, int bits) {
  QuantParams<Scalar> p;
  p.bits = bits;
  p.start = q.start.value()(0, 0);
  const auto& w = q.widths.value();
  p.widths.assign(w.data(), w.data() + w.size());
  p.beta1 = q.beta1.value()(0, 0);
  p.beta2 = q.beta2.value()(0, 0);
  return p;
}

// Graph node: y = out_scale * level(beta1 * x) with the expectation-based
// backward for x and all quantizer parameters.
template <typename Scalar>
Var<Scalar> quantize_activation(const Var<Scalar>& x, const QuantizerVars<Scalar>& q, int bits,
                                LevelMode mode = LevelMode::Hard) {
  using Mat = Matrix<Scalar>;
  const QuantParams<Scalar> p = params_from_vars(q, bits);
  auto ctx = std::make_shared<QuantizerContext<Scalar>>(save_context(x.value(), p, mode));
  Mat out = ctx->level * p.out_scale();
  return detail::tape_of(x).record(
      "n2uq_activation", std::move(out), {x, q.start, q.widths, q.beta1, q.beta2},
      [ctx](const Mat& g) {
        const auto grads = quantizer_backward(*ctx, g);
        std::vector<Mat> res(5);
        res[0] = grads.input;
        res[1] = Mat::Constant(1, 1, grads.start);
        res[2] = Eigen::Map<const Mat>(grads.widths.data(), 1, static_cast<Index>(grads.widths.size()));
        res[3] = Mat::Constant(1, 1, grads.beta1);
        res[4] = Mat::Constant(1, 1, grads.beta2);
        return res;
      },
      true);
}

}  // namespace n2uq
