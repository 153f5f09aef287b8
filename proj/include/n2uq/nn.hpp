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

// Quantization-aware network: a chain of linear / 3x3-conv layers. Inner
// layers quantize their input activations with the nonuniform-to-uniform
// quantizer and their weights with F_Q; the first and the last layer stay
// full precision. Every layer except the last is followed by RPReLU.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "n2uq/activation_quantizer.hpp"
#include "n2uq/errors.hpp"
#include "n2uq/stochastic.hpp"
#include "n2uq/tensor.hpp"
#include "n2uq/weight_quantizer.hpp"

namespace n2uq {

enum class LayerKind { Linear, Conv3x3 };

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  int in = 0;   // features (linear) or channels (conv)
  int out = 0;
  int height = 1;  // spatial extent, conv only
  int width = 1;
  bool quantize_weights = false;
  bool quantize_acts = false;
  int bits_w = 32;
  int bits_a = 32;

  Index pixels() const { return kind == LayerKind::Conv3x3 ? Index{height} * width : 1; }
  Index in_features() const { return Index{in} * pixels(); }
  Index out_features() const { return Index{out} * pixels(); }
  Index fan_in() const { return kind == LayerKind::Conv3x3 ? Index{in} * 9 : Index{in}; }
};

enum class ParamGroup { Weight, Quantizer, Activation };

// y = x - gamma + zeta for x > gamma, slope*(x - gamma) + zeta otherwise,
// per channel of `channel_size` consecutive columns. At x == gamma the
// backward uses the positive branch.
template <typename Scalar>
Var<Scalar> rprelu(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& slope, const Var<Scalar>& shift,
                   Index channel_size = 1) {
  using Mat = Matrix<Scalar>;
  const Index channels = gamma.value().size();
  if (gamma.rows() != 1 || slope.value().size() != channels || shift.value().size() != channels ||
      x.cols() != channels * channel_size) {
    throw DimensionError("rprelu: parameter length does not match channel count");
  }
  Mat out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index col = 0; col < x.cols(); ++col) {
      const Index c = col / channel_size;
      const Scalar u = x.value()(r, col) - gamma.value()(0, c);
      out(r, col) = (u > 0 ? u : slope.value()(0, c) * u) + shift.value()(0, c);
    }
  }
  return detail::tape_of(x).record(
      "rprelu", std::move(out), {x, gamma, slope, shift}, [x, gamma, slope, channels, channel_size](const Mat& g) {
        Mat gx(g.rows(), g.cols());
        Mat gg = Mat::Zero(1, channels), gs = Mat::Zero(1, channels), gz = Mat::Zero(1, channels);
        for (Index r = 0; r < g.rows(); ++r) {
          for (Index col = 0; col < g.cols(); ++col) {
            const Index c = col / channel_size;
            const Scalar u = x.value()(r, col) - gamma.value()(0, c);
            const Scalar up = g(r, col);
            const Scalar d = u >= 0 ? Scalar(1) : slope.value()(0, c);
            gx(r, col) = up * d;
            gg(0, c) -= up * d;
            if (u < 0) gs(0, c) += up * u;
            gz(0, c) += up;
          }
        }
        return std::vector<Mat>{gx, gg, gs, gz};
      });
}

template <typename Scalar>
Matrix<Scalar> rprelu_values(const Matrix<Scalar>& x, const Matrix<Scalar>& gamma, const Matrix<Scalar>& slope,
                             const Matrix<Scalar>& shift, Index channel_size) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index col = 0; col < x.cols(); ++col) {
      const Index c = col / channel_size;
      const Scalar u = x(r, col) - gamma(0, c);
      out(r, col) = (u > 0 ? u : slope(0, c) * u) + shift(0, c);
    }
  }
  return out;
}

struct NetworkOptions {
  WeightScheme weight_scheme = WeightScheme::Entropy;
  bool learn_thresholds = true;  // false: interval widths and start stay at their uniform initialization
};

template <typename Scalar>
struct Layer {
  LayerSpec spec;
  Matrix<Scalar> weight;         // out x fan_in
  Matrix<Scalar> bias;           // 1 x out
  Matrix<Scalar> channel_scale;  // 1 x out, quantized-weight layers only
  Matrix<Scalar> weight_gamma;   // 1 x 1, learned-scale scheme only
  Matrix<Scalar> q_start, q_widths, q_beta1, q_beta2;  // quantized-activation layers only
  bool has_rprelu = false;
  Matrix<Scalar> act_gamma, act_slope, act_shift;  // 1 x out

  QuantParams<Scalar> quant_params() const {
    QuantParams<Scalar> p;
    p.bits = spec.bits_a;
    p.start = q_start(0, 0);
    p.widths.assign(q_widths.data(), q_widths.data() + q_widths.size());
    p.beta1 = q_beta1(0, 0);
    p.beta2 = q_beta2(0, 0);
    return p;
  }

  void set_quant_params(const QuantParams<Scalar>& p) {
    q_start(0, 0) = p.start;
    for (std::size_t i = 0; i < p.widths.size(); ++i) q_widths(0, static_cast<Index>(i)) = p.widths[i];
    q_beta1(0, 0) = p.beta1;
    q_beta2(0, 0) = p.beta2;
  }
};

// Parameter handle used by the optimizer and checkpointing.
template <typename Scalar>
struct ParamRef {
  std::string name;
  Matrix<Scalar>* value;
  ParamGroup group;
  bool trainable;
};

template <typename Scalar>
struct ParamBinding {
  Matrix<Scalar>* value;
  Var<Scalar> leaf;
};

inline void validate_specs(const std::vector<LayerSpec>& specs) {
  if (specs.size() < 2) throw ContractError("network: at least two layers (first and last) required");
  const auto& first = specs.front();
  const auto& last = specs.back();
  if (first.quantize_weights || first.quantize_acts || last.quantize_weights || last.quantize_acts) {
    throw ContractError("network: first and last layers must be full precision");
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.in < 1 || s.out < 1 || s.height < 1 || s.width < 1) throw ContractError("network: non-positive layer size");
    if (s.quantize_weights) weight_levels(s.bits_w);
    if (s.quantize_acts && (s.bits_a < 1 || s.bits_a > kMaxActivationBits)) {
      throw ContractError("network: activation bit-width out of range");
    }
    if (i > 0 && specs[i - 1].out_features() != s.in_features()) {
      throw DimensionError("network: layer " + std::to_string(i) + " expects " + std::to_string(s.in_features()) +
                           " inputs, previous layer produces " + std::to_string(specs[i - 1].out_features()));
    }
  }
}

template <typename Scalar>
class Network {
 public:
  Network() = default;

  static Network build(std::vector<LayerSpec> specs, NetworkOptions options, std::uint64_t seed) {
    validate_specs(specs);
    Network net;
    net.options_ = options;
    CounterRng rng(seed);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& s = specs[i];
      Layer<Scalar> l;
      l.spec = s;
      const Index fan_in = s.fan_in();
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      l.weight.resize(s.out, fan_in);
      for (Index k = 0; k < l.weight.size(); ++k) {
        l.weight.data()[k] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
      }
      l.bias = Matrix<Scalar>::Zero(1, s.out);
      if (s.quantize_weights) {
        l.channel_scale = Matrix<Scalar>::Constant(1, s.out, static_cast<Scalar>(1.0 / std::sqrt(double(fan_in))));
        if (options.weight_scheme == WeightScheme::LearnedScale) {
          l.weight_gamma = Matrix<Scalar>::Constant(1, 1, initial_learned_scale(l.weight, s.bits_w));
        }
      }
      if (s.quantize_acts) {
        const auto p = default_params<Scalar>(s.bits_a);
        l.q_start = Matrix<Scalar>::Constant(1, 1, p.start);
        l.q_widths = Eigen::Map<const Matrix<Scalar>>(p.widths.data(), 1, static_cast<Index>(p.widths.size()));
        l.q_beta1 = Matrix<Scalar>::Constant(1, 1, p.beta1);
        l.q_beta2 = Matrix<Scalar>::Constant(1, 1, p.beta2);
      }
      l.has_rprelu = i + 1 < specs.size();
      if (l.has_rprelu) {
        l.act_gamma = Matrix<Scalar>::Zero(1, s.out);
        l.act_slope = Matrix<Scalar>::Constant(1, s.out, Scalar(0.25));
        l.act_shift = Matrix<Scalar>::Zero(1, s.out);
      }
      net.layers_.push_back(std::move(l));
    }
    return net;
  }

  const std::vector<Layer<Scalar>>& layers() const { return layers_; }
  std::vector<Layer<Scalar>>& layers() { return layers_; }
  const NetworkOptions& options() const { return options_; }
  void set_options(NetworkOptions o) { options_ = o; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> s;
    for (const auto& l : layers_) s.push_back(l.spec);
    return s;
  }

  // Every stored tensor in a fixed order.
  std::vector<ParamRef<Scalar>> params() {
    std::vector<ParamRef<Scalar>> out;
    const bool thresholds = options_.learn_thresholds;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      out.push_back({p + "weight", &l.weight, ParamGroup::Weight, true});
      out.push_back({p + "bias", &l.bias, ParamGroup::Weight, true});
      if (l.channel_scale.size()) out.push_back({p + "channel_scale", &l.channel_scale, ParamGroup::Weight, true});
      if (l.weight_gamma.size()) out.push_back({p + "weight_gamma", &l.weight_gamma, ParamGroup::Weight, true});
      if (l.q_widths.size()) {
        out.push_back({p + "quant.start", &l.q_start, ParamGroup::Quantizer, thresholds});
        out.push_back({p + "quant.widths", &l.q_widths, ParamGroup::Quantizer, thresholds});
        out.push_back({p + "quant.beta1", &l.q_beta1, ParamGroup::Quantizer, true});
        out.push_back({p + "quant.beta2", &l.q_beta2, ParamGroup::Quantizer, true});
      }
      if (l.has_rprelu) {
        out.push_back({p + "rprelu.gamma", &l.act_gamma, ParamGroup::Activation, true});
        out.push_back({p + "rprelu.slope", &l.act_slope, ParamGroup::Activation, true});
        out.push_back({p + "rprelu.shift", &l.act_shift, ParamGroup::Activation, true});
      }
    }
    return out;
  }

  // Total learnable activation-quantizer scalars.
  std::size_t quantizer_scalar_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      if (l.q_widths.size()) n += l.quant_params().scalar_count();
    }
    return n;
  }

  // Records the forward pass on `tape`. When `bindings` is non-null every
  // parameter becomes a leaf and is reported there so gradients can be read
  // back after Tape::backward.
  Var<Scalar> forward(Tape<Scalar>& tape, const Matrix<Scalar>& input, std::vector<ParamBinding<Scalar>>* bindings,
                      LevelMode mode = LevelMode::Hard) {
    if (layers_.empty()) throw ContractError("network: no layers");
    if (input.cols() != layers_.front().spec.in_features()) {
      throw DimensionError("network: input has " + std::to_string(input.cols()) + " features, expected " +
                           std::to_string(layers_.front().spec.in_features()));
    }
    const bool thresholds = options_.learn_thresholds;
    auto leaf = [&](Matrix<Scalar>& m, bool trainable = true) {
      Var<Scalar> v = tape.leaf(m, bindings != nullptr && trainable);
      if (bindings && trainable) bindings->push_back({&m, v});
      return v;
    };
    const Index batch = input.rows();
    Var<Scalar> h = tape.leaf(input, false);
    for (auto& l : layers_) {
      const auto& s = l.spec;
      if (s.quantize_acts) {
        QuantizerVars<Scalar> q{leaf(l.q_start, thresholds), leaf(l.q_widths, thresholds), leaf(l.q_beta1),
                                leaf(l.q_beta2)};
        h = quantize_activation(h, q, s.bits_a, mode);
      }
      Var<Scalar> w = leaf(l.weight);
      if (s.quantize_weights) {
        Var<Scalar> gamma = l.weight_gamma.size() ? leaf(l.weight_gamma) : Var<Scalar>{};
        w = quantize_weight_node(w, s.bits_w, options_.weight_scheme, gamma);
      }
      Var<Scalar> z;
      if (s.kind == LayerKind::Conv3x3) {
        z = matmul(im2col3x3(h, s.in, s.height, s.width), transpose(w));
        z = pixels_to_channels(z, batch, s.pixels());
      } else {
        z = matmul(h, transpose(w));
      }
      if (s.quantize_weights) z = mul_channelwise(z, leaf(l.channel_scale), s.pixels());
      z = add_channelwise(z, leaf(l.bias), s.pixels());
      if (l.has_rprelu) z = rprelu(z, leaf(l.act_gamma), leaf(l.act_slope), leaf(l.act_shift), s.pixels());
      h = z;
    }
    return h;
  }

  Matrix<Scalar> predict(const Matrix<Scalar>& input, LevelMode mode = LevelMode::Hard) {
    Tape<Scalar> tape;
    return forward(tape, input, nullptr, mode).value();
  }

  template <typename Other>
  Network<Other> cast() const {
    Network<Other> net;
    net.set_options(options_);
    for (const auto& l : layers_) {
      Layer<Other> o;
      o.spec = l.spec;
      o.weight = l.weight.template cast<Other>();
      o.bias = l.bias.template cast<Other>();
      o.channel_scale = l.channel_scale.template cast<Other>();
      o.weight_gamma = l.weight_gamma.template cast<Other>();
      o.q_start = l.q_start.template cast<Other>();
      o.q_widths = l.q_widths.template cast<Other>();
      o.q_beta1 = l.q_beta1.template cast<Other>();
      o.q_beta2 = l.q_beta2.template cast<Other>();
      o.has_rprelu = l.has_rprelu;
      o.act_gamma = l.act_gamma.template cast<Other>();
      o.act_slope = l.act_slope.template cast<Other>();
      o.act_shift = l.act_shift.template cast<Other>();
      net.layers().push_back(std::move(o));
    }
    return net;
  }

 private:
  std::vector<Layer<Scalar>> layers_;
  NetworkOptions options_;
};

}  // namespace n2uq
