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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "n2uq/tensor.hpp"

namespace n2uq {

struct Dataset {
  Matrix<float> features;  // samples x features, scaled to [0, 1] for file inputs
  std::vector<int> labels;
  int classes = 0;
  std::array<int, 3> shape{1, 1, 0};  // channels, height, width of one sample

  std::size_t size() const { return labels.size(); }
};

// Raw IDX array: big-endian magic (0x0000 08 ndim for unsigned bytes) and
// dimensions followed by the payload.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

IdxArray read_idx(const std::string& path);
void write_idx(const std::string& path, const IdxArray& array);

// images: u8 tensor of 3 dims (count, rows, cols); labels: u8 vector.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Rows of `label,feature,...`. Features already in [0, 1] are kept;
// otherwise one affine map sends the file's min/max feature to 0/1.
Dataset load_csv(const std::string& path);

// Isotropic Gaussian blobs: class means drawn uniformly on [-1, 1]^dim,
// samples drawn with standard deviation `spread`.
Dataset make_gaussian_mixture(std::size_t samples, int dim, int classes, double spread, std::uint64_t seed,
                              std::uint64_t stream = 0);

}  // namespace n2uq
