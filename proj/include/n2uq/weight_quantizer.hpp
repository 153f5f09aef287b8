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

// Weight quantization: a fixed equidistant quantizer F_Q onto 2^n signed
// levels in [-1, 1], preceded by one of several rescaling schemes. The
// default scheme rescales each filter so its absolute mean equals
// 2^(n-1)/(2^n-1), which spreads uniformly initialized weights evenly over
// the quantization levels and so maximizes the entropy of the codes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "n2uq/activation_quantizer.hpp"
#include "n2uq/errors.hpp"
#include "n2uq/tensor.hpp"

namespace n2uq {

inline constexpr int kMaxWeightBits = 16;

enum class WeightScheme {
  Entropy,       // per-filter absolute-mean rescaling
  TanhMax,       // tanh(W) / max|tanh(W)|
  WeightNorm,    // per-filter unit L2 norm
  LearnedScale,  // trainable scalar gamma * W
  Clip,          // no rescaling
};

inline WeightScheme parse_weight_scheme(const std::string& name) {
  if (name == "entropy") return WeightScheme::Entropy;
  if (name == "tanh_max") return WeightScheme::TanhMax;
  if (name == "weight_norm") return WeightScheme::WeightNorm;
  if (name == "learned_scale") return WeightScheme::LearnedScale;
  if (name == "clip") return WeightScheme::Clip;
  throw ContractError("unknown weight scheme '" + name + "'");
}

inline std::string to_string(WeightScheme scheme) {
  switch (scheme) {
    case WeightScheme::Entropy: return "entropy";
    case WeightScheme::TanhMax: return "tanh_max";
    case WeightScheme::WeightNorm: return "weight_norm";
    case WeightScheme::LearnedScale: return "learned_scale";
    case WeightScheme::Clip: return "clip";
  }
  return "entropy";
}

inline int weight_levels(int bits) {
  if (bits < 1 || bits > kMaxWeightBits) throw ContractError("weight bit-width must be in [1, 16]");
  return (1 << bits) - 1;
}

// 2^(n-1) / (2^n - 1).
template <typename Scalar = double>
Scalar entropy_target_mean(int bits) {
  return static_cast<Scalar>(1 << (bits - 1)) / static_cast<Scalar>(weight_levels(bits));
}

// One factor per filter (row): target_mean * count / ||row||_1.
template <typename Scalar>
std::vector<Scalar> regularization_factors(const Matrix<Scalar>& w, int bits) {
  if (w.size() == 0) throw DegenerateInputError("regularize: empty weight filter");
  const Scalar target = entropy_target_mean<Scalar>(bits);
  std::vector<Scalar> f(static_cast<std::size_t>(w.rows()));
  for (Index r = 0; r < w.rows(); ++r) {
    const Scalar l1 = w.row(r).template lpNorm<1>();
    if (!(l1 > 0)) throw DegenerateInputError("regularize: filter " + std::to_string(r) + " has zero L1 norm");
    if (!std::isfinite(static_cast<double>(l1))) throw DegenerateInputError("regularize: non-finite weights");
    f[static_cast<std::size_t>(r)] = target * static_cast<Scalar>(w.cols()) / l1;
  }
  return f;
}

template <typename Scalar>
Matrix<Scalar> regularize(const Matrix<Scalar>& w, int bits) {
  const auto f = regularization_factors(w, bits);
  Matrix<Scalar> out = w;
  for (Index r = 0; r < w.rows(); ++r) out.row(r) *= f[static_cast<std::size_t>(r)];
  return out;
}

// Codes c in [0, 2^n-1] with w^q = scale*c + offset.
template <typename Scalar = double>
struct QuantizedWeights {
  CodeMatrix codes;
  int bits = 0;
  Scalar scale = 0;
  Scalar offset = -1;

  Matrix<Scalar> dequantize() const { return (codes.template cast<Scalar>() * scale).array() + offset; }
};

// F_Q: round((clip(w', -1, 1) + 1) * L/2); ties k+0.5 go to k+1.
template <typename Scalar>
std::uint32_t fq_code(Scalar w, int levels) {
  const Scalar clipped = std::clamp(w, Scalar(-1), Scalar(1));
  const Scalar shifted = (clipped + Scalar(1)) * static_cast<Scalar>(levels) / Scalar(2);
  return static_cast<std::uint32_t>(std::floor(shifted + Scalar(0.5)));
}

template <typename Scalar>
QuantizedWeights<Scalar> fq_quantize(const Matrix<Scalar>& w, int bits) {
  const int levels = weight_levels(bits);
  QuantizedWeights<Scalar> q;
  q.bits = bits;
  q.scale = Scalar(2) / static_cast<Scalar>(levels);
  q.offset = Scalar(-1);
  q.codes.resize(w.rows(), w.cols());
  for (Index k = 0; k < w.size(); ++k) q.codes.data()[k] = fq_code(w.data()[k], levels);
  return q;
}

// Level occupancy fractions p_0 .. p_{2^n-1}.
template <typename Scalar>
std::vector<double> level_occupancy(const QuantizedWeights<Scalar>& q) {
  const int levels = weight_levels(q.bits);
  std::vector<double> p(static_cast<std::size_t>(levels) + 1, 0.0);
  if (q.codes.size() == 0) return p;
  for (Index k = 0; k < q.codes.size(); ++k) p[q.codes.data()[k]] += 1.0;
  for (auto& v : p) v /= static_cast<double>(q.codes.size());
  return p;
}

// Shannon entropy (bits) of the level occupancy.
template <typename Scalar>
double entropy_bits(const QuantizedWeights<Scalar>& q) {
  if (q.codes.size() == 0) throw ContractError("entropy_bits: no codes");
  double h = 0.0;
  for (double p : level_occupancy(q)) {
    if (p > 0) h -= p * std::log2(p);
  }
  return h;
}

// Rescaled weights W' plus what backward needs: dW'/dW with statistics
// held constant, and dW'/dgamma for the learned-scale scheme.
template <typename Scalar>
struct WeightTransform {
  Matrix<Scalar> transformed;
  Matrix<Scalar> jacobian;
  Matrix<Scalar> gamma_jacobian;
};

template <typename Scalar>
Scalar initial_learned_scale(const Matrix<Scalar>& w, int bits) {
  const Scalar l1 = w.template lpNorm<1>();
  if (!(l1 > 0)) throw DegenerateInputError("learned scale: zero weights");
  return entropy_target_mean<Scalar>(bits) * static_cast<Scalar>(w.size()) / l1;
}

template <typename Scalar>
WeightTransform<Scalar> transform_weights(const Matrix<Scalar>& w, int bits, WeightScheme scheme,
                                          Scalar gamma = Scalar(1)) {
  WeightTransform<Scalar> t;
  switch (scheme) {
    case WeightScheme::Entropy: {
      const auto f = regularization_factors(w, bits);
      t.transformed = w;
      t.jacobian.resize(w.rows(), w.cols());
      for (Index r = 0; r < w.rows(); ++r) {
        t.transformed.row(r) *= f[static_cast<std::size_t>(r)];
        t.jacobian.row(r).setConstant(f[static_cast<std::size_t>(r)]);
      }
      break;
    }
    case WeightScheme::TanhMax: {
      const Matrix<Scalar> th = w.array().tanh().matrix();
      const Scalar m = th.cwiseAbs().maxCoeff();
      if (!(m > 0)) throw DegenerateInputError("tanh/max baseline: all-zero weights");
      t.transformed = th / m;
      t.jacobian = ((Scalar(1) - th.array().square()) / m).matrix();
      break;
    }
    case WeightScheme::WeightNorm: {
      t.transformed = w;
      t.jacobian.resize(w.rows(), w.cols());
      for (Index r = 0; r < w.rows(); ++r) {
        const Scalar n2 = w.row(r).norm();
        if (!(n2 > 0)) throw DegenerateInputError("weight norm: filter " + std::to_string(r) + " has zero norm");
        t.transformed.row(r) /= n2;
        t.jacobian.row(r).setConstant(Scalar(1) / n2);
      }
      break;
    }
    case WeightScheme::LearnedScale:
      t.transformed = w * gamma;
      t.jacobian = Matrix<Scalar>::Constant(w.rows(), w.cols(), gamma);
      t.gamma_jacobian = w;
      break;
    case WeightScheme::Clip:
      t.transformed = w;
      t.jacobian = Matrix<Scalar>::Ones(w.rows(), w.cols());
      break;
  }
  return t;
}

// Clip mask and frozen chain factors captured at forward time.
template <typename Scalar>
struct WeightQuantContext {
  Matrix<Scalar> pass;        // 1[|w'| <= 1] * dW'/dW
  Matrix<Scalar> gamma_pass;  // 1[|w'| <= 1] * dW'/dgamma (learned scale only)
  bool populated = false;
};

template <typename Scalar>
WeightQuantContext<Scalar> weight_context(const WeightTransform<Scalar>& t) {
  WeightQuantContext<Scalar> ctx;
  const auto mask = (t.transformed.array().abs() <= Scalar(1)).template cast<Scalar>();
  ctx.pass = (mask * t.jacobian.array()).matrix();
  if (t.gamma_jacobian.size() != 0) ctx.gamma_pass = (mask * t.gamma_jacobian.array()).matrix();
  ctx.populated = true;
  return ctx;
}

// Straight-through gradient through F_Q and the rescaling.
template <typename Scalar>
Matrix<Scalar> weight_backward(const WeightQuantContext<Scalar>& ctx, const Matrix<Scalar>& g_up) {
  if (!ctx.populated) throw ContractError("weight_backward: forward clip mask missing");
  if (g_up.rows() != ctx.pass.rows() || g_up.cols() != ctx.pass.cols()) {
    throw DimensionError("weight_backward: gradient shape mismatch");
  }
  return g_up.cwiseProduct(ctx.pass);
}

template <typename Scalar>
Scalar weight_gamma_backward(const WeightQuantContext<Scalar>& ctx, const Matrix<Scalar>& g_up) {
  if (!ctx.populated || ctx.gamma_pass.size() == 0) throw ContractError("weight_gamma_backward: no gamma path");
  return g_up.cwiseProduct(ctx.gamma_pass).sum();
}

template <typename Scalar>
QuantizedWeights<Scalar> quantize_weights(const Matrix<Scalar>& w, int bits, WeightScheme scheme,
                                          Scalar gamma = Scalar(1)) {
  return fq_quantize(transform_weights(w, bits, scheme, gamma).transformed, bits);
}

template <typename Scalar>
QuantizedWeights<Scalar> baseline_tanh_max(const Matrix<Scalar>& w, int bits) {
  return quantize_weights(w, bits, WeightScheme::TanhMax);
}

template <typename Scalar>
QuantizedWeights<Scalar> baseline_weight_norm(const Matrix<Scalar>& w, int bits) {
  return quantize_weights(w, bits, WeightScheme::WeightNorm);
}

template <typename Scalar>
QuantizedWeights<Scalar> baseline_learned_scale(const Matrix<Scalar>& w, int bits, Scalar gamma) {
  return quantize_weights(w, bits, WeightScheme::LearnedScale, gamma);
}

// Graph node: dequantized F_Q(T(W)) with the straight-through backward.
// `gamma` (1x1) is consulted only for WeightScheme::LearnedScale.
template <typename Scalar>
Var<Scalar> quantize_weight_node(const Var<Scalar>& w, int bits, WeightScheme scheme, const Var<Scalar>& gamma = {}) {
  using Mat = Matrix<Scalar>;
  const bool learned = scheme == WeightScheme::LearnedScale;
  if (learned && !gamma) throw ContractError("quantize_weight_node: learned scale requires gamma");
  const auto t = transform_weights(w.value(), bits, scheme, learned ? gamma.value()(0, 0) : Scalar(1));
  auto ctx = std::make_shared<WeightQuantContext<Scalar>>(weight_context(t));
  Mat out = fq_quantize(t.transformed, bits).dequantize();
  std::vector<Var<Scalar>> inputs{w};
  if (learned) inputs.push_back(gamma);
  return detail::tape_of(w).record(
      "weight_quantizer", std::move(out), inputs,
      [ctx, learned](const Mat& g) {
        std::vector<Mat> res;
        res.push_back(weight_backward(*ctx, g));
        if (learned) res.push_back(Mat::Constant(1, 1, weight_gamma_backward(*ctx, g)));
        return res;
      },
      true);
}

}  // namespace n2uq
