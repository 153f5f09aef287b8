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

// Packed inference model. Quantized layers run through the popcount engine;
// the full-precision first and last layers run as dense float layers.
//
// Container layout (little-endian):
//
//   magic "N2UQPACK" | u32 version | u32 layer count | layers
//
// layer:
//   u32 kind (0 dense, 1 bitwise) | u32 geometry (0 linear, 1 conv3x3)
//   u32 in | u32 out | u32 height | u32 width | u32 M | u32 K
//   bitwise: f32 start | f32 beta1 | f32 beta2 | f32 widths[2^M - 1]
//            u32 words per plane | u64 planes[out][K][words]
//            f32 row_scale[out]
//   dense:   f32 weight[out][fan_in]
//   f32 bias[out] | u32 has_rprelu | (f32 gamma[out] | f32 slope[out] | f32 shift[out])
//
// M and K are the activation and weight bit-widths (0 for dense layers).
// Weight codes map to levels 2/(2^K - 1) * c - 1; activation codes to
// beta2 * 2/(2^M - 1) * c.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "n2uq/activation_quantizer.hpp"
#include "n2uq/bitwise.hpp"
#include "n2uq/data.hpp"
#include "n2uq/nn.hpp"

namespace n2uq {

inline constexpr std::uint32_t kPackedVersion = 1;

struct PackedLayer {
  LayerSpec spec;
  bool bitwise = false;
  QuantParams<double> act_params;  // bitwise only
  QuantLinearPacked linear;        // bitwise only; carries row scale and bias
  Matrix<double> weight;           // dense only
  std::vector<double> bias;        // dense only
  bool has_rprelu = false;
  Matrix<double> act_gamma, act_slope, act_shift;
};

struct PackedModel {
  std::vector<PackedLayer> layers;

  Matrix<double> predict(const Matrix<double>& input) const;
};

PackedModel pack_network(const Network<double>& net);

std::vector<std::uint8_t> serialize(const PackedModel& model);
PackedModel deserialize_packed(std::span<const std::uint8_t> bytes);
void save_packed(const PackedModel& model, const std::string& path);
PackedModel load_packed(const std::string& path);

double evaluate(const PackedModel& model, const Dataset& data);

}  // namespace n2uq
