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

#include "n2uq/bitwise.hpp"

#include <bit>
#include <cmath>
#include <string>

namespace n2uq {

namespace {

constexpr std::size_t kWordBits = 64;

std::size_t words_for(std::size_t length) { return (length + kWordBits - 1) / kWordBits; }

}  // namespace

BitPlanes::BitPlanes(std::size_t length, int bit_width)
    : length_(length), bit_width_(bit_width), words_per_plane_(words_for(length)) {
  if (bit_width < 1 || bit_width > kMaxPlaneBits) throw ContractError("BitPlanes: bit-width must be in [1, 16]");
  words_.assign(words_per_plane_ * static_cast<std::size_t>(bit_width), 0);
}

BitPlanes pack(std::span<const std::uint32_t> codes, int bit_width) {
  BitPlanes planes(codes.size(), bit_width);
  const std::uint32_t limit = 1u << bit_width;
  for (std::size_t k = 0; k < codes.size(); ++k) {
    const std::uint32_t c = codes[k];
    if (c >= limit) {
      throw ContractError("pack: code " + std::to_string(c) + " does not fit in " + std::to_string(bit_width) + " bits");
    }
    const std::uint64_t bit = std::uint64_t{1} << (k % kWordBits);
    for (int i = 0; i < bit_width; ++i) {
      if ((c >> i) & 1u) planes.plane(i)[k / kWordBits] |= bit;
    }
  }
  return planes;
}

std::vector<std::uint32_t> unpack(const BitPlanes& planes) {
  std::vector<std::uint32_t> codes(planes.length(), 0);
  for (int i = 0; i < planes.bit_width(); ++i) {
    const auto p = planes.plane(i);
    for (std::size_t k = 0; k < codes.size(); ++k) {
      codes[k] |= static_cast<std::uint32_t>((p[k / kWordBits] >> (k % kWordBits)) & 1u) << i;
    }
  }
  return codes;
}

std::uint64_t popcount_dot(const BitPlanes& a, const BitPlanes& w) {
  if (a.length() != w.length()) {
    throw ContractError("popcount_dot: lengths " + std::to_string(a.length()) + " and " + std::to_string(w.length()) +
                        " differ");
  }
  std::uint64_t total = 0;
  for (int i = 0; i < a.bit_width(); ++i) {
    const auto ai = a.plane(i);
    for (int j = 0; j < w.bit_width(); ++j) {
      const auto wj = w.plane(j);
      std::uint64_t count = 0;
      for (std::size_t k = 0; k < ai.size(); ++k) count += static_cast<std::uint64_t>(std::popcount(ai[k] & wj[k]));
      total += count << (i + j);
    }
  }
  return total;
}

std::uint64_t code_sum(const BitPlanes& a) {
  std::uint64_t total = 0;
  for (int i = 0; i < a.bit_width(); ++i) {
    std::uint64_t count = 0;
    for (std::uint64_t word : a.plane(i)) count += static_cast<std::uint64_t>(std::popcount(word));
    total += count << i;
  }
  return total;
}

QuantLinearPacked pack_linear(const QuantizedWeights<double>& weights, int act_bits, double act_scale,
                              std::vector<double> bias, std::vector<double> row_scale) {
  if (act_bits < 1 || act_bits > kMaxPlaneBits) throw ContractError("pack_linear: activation bit-width out of range");
  QuantLinearPacked layer;
  layer.act_bits = act_bits;
  layer.weight_bits = weights.bits;
  layer.out_features = static_cast<std::size_t>(weights.codes.rows());
  layer.in_features = static_cast<std::size_t>(weights.codes.cols());
  layer.act_scale = act_scale;
  layer.weight_scale = weights.scale;
  layer.weight_offset = weights.offset;
  if (!bias.empty() && bias.size() != layer.out_features) throw DimensionError("pack_linear: bias length != rows");
  if (!row_scale.empty() && row_scale.size() != layer.out_features) {
    throw DimensionError("pack_linear: row scale length != rows");
  }
  layer.bias = std::move(bias);
  layer.row_scale = std::move(row_scale);
  layer.rows.reserve(layer.out_features);
  for (Index r = 0; r < weights.codes.rows(); ++r) {
    const std::uint32_t* row = weights.codes.data() + r * weights.codes.cols();
    layer.rows.push_back(pack({row, layer.in_features}, weights.bits));
    layer.row_code_sums.push_back(code_sum(layer.rows.back()));
  }
  return layer;
}

double dot_real(const BitPlanes& activations, double act_scale, const QuantLinearPacked& layer, std::size_t row) {
  if (row >= layer.rows.size()) throw ContractError("dot_real: row out of range");
  const BitPlanes& w = layer.rows[row];
  const double products = static_cast<double>(popcount_dot(activations, w));
  const double act_total = static_cast<double>(code_sum(activations));
  return act_scale * (layer.weight_scale * products + layer.weight_offset * act_total);
}

Matrix<double> infer_linear(const QuantLinearPacked& layer, const ActivationCodes<double>& x) {
  if (x.bits != layer.act_bits) {
    throw ContractError("infer_linear: activation bit-width " + std::to_string(x.bits) + " != layer's " +
                        std::to_string(layer.act_bits));
  }
  if (static_cast<std::size_t>(x.codes.cols()) != layer.in_features) {
    throw DimensionError("infer_linear: input width != layer in_features");
  }
  Matrix<double> out(x.codes.rows(), static_cast<Index>(layer.out_features));
  for (Index b = 0; b < x.codes.rows(); ++b) {
    const BitPlanes a = pack({x.codes.data() + b * x.codes.cols(), layer.in_features}, layer.act_bits);
    const double act_total = static_cast<double>(code_sum(a));
    for (std::size_t r = 0; r < layer.out_features; ++r) {
      const double products = static_cast<double>(popcount_dot(a, layer.rows[r]));
      double y = layer.act_scale * (layer.weight_scale * products + layer.weight_offset * act_total);
      if (!layer.row_scale.empty()) y *= layer.row_scale[r];
      if (!layer.bias.empty()) y += layer.bias[r];
      out(b, static_cast<Index>(r)) = y;
    }
  }
  return out;
}

}  // namespace n2uq
