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

// Bit-plane popcount arithmetic for quantized dot products.
//
// An M-bit code vector is stored as M bit-planes; the integer dot product of
// two code vectors is
//
//   sum_i sum_j 2^(i+j) * popcount(and(a_i, w_j)).
//
// Weights are signed levels w = s_w * c - 1 stored as unsigned codes c, so a
// real-valued dot product needs one correction term, s_a * sum(c_a), which is
// itself a popcount over the activation planes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "n2uq/activation_quantizer.hpp"
#include "n2uq/tensor.hpp"
#include "n2uq/weight_quantizer.hpp"

namespace n2uq {

inline constexpr int kMaxPlaneBits = 16;

class BitPlanes {
 public:
  BitPlanes() = default;
  BitPlanes(std::size_t length, int bit_width);

  std::size_t length() const { return length_; }
  int bit_width() const { return bit_width_; }
  std::size_t words_per_plane() const { return words_per_plane_; }

  std::span<const std::uint64_t> plane(int bit) const {
    return {words_.data() + static_cast<std::size_t>(bit) * words_per_plane_, words_per_plane_};
  }
  std::span<std::uint64_t> plane(int bit) {
    return {words_.data() + static_cast<std::size_t>(bit) * words_per_plane_, words_per_plane_};
  }
  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint64_t>& words() { return words_; }

 private:
  std::size_t length_ = 0;
  int bit_width_ = 0;
  std::size_t words_per_plane_ = 0;
  std::vector<std::uint64_t> words_;  // plane-major
};

BitPlanes pack(std::span<const std::uint32_t> codes, int bit_width);
std::vector<std::uint32_t> unpack(const BitPlanes& planes);

std::uint64_t popcount_dot(const BitPlanes& a, const BitPlanes& w);

// sum of codes as sum_i 2^i * popcount(plane_i).
std::uint64_t code_sum(const BitPlanes& a);

// A linear layer with packed weight rows. Output row r is
//   row_scale[r] * sum_k a_k w_k + bias[r]
// where a = act_scale * c_a and w = weight_scale * c_w + weight_offset.
struct QuantLinearPacked {
  int act_bits = 0;
  int weight_bits = 0;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  double act_scale = 0.0;
  double weight_scale = 0.0;
  double weight_offset = -1.0;
  std::vector<BitPlanes> rows;
  std::vector<std::uint64_t> row_code_sums;
  std::vector<double> row_scale;  // empty means 1
  std::vector<double> bias;       // empty means 0
};

QuantLinearPacked pack_linear(const QuantizedWeights<double>& weights, int act_bits, double act_scale,
                              std::vector<double> bias = {}, std::vector<double> row_scale = {});

// Affine-bridged real dot product of one activation vector with weight row
// `row` (no row scale or bias).
double dot_real(const BitPlanes& activations, double act_scale, const QuantLinearPacked& layer, std::size_t row);

// x.codes: batch x in_features.
Matrix<double> infer_linear(const QuantLinearPacked& layer, const ActivationCodes<double>& x);

}  // namespace n2uq
