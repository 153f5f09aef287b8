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

// Training configuration as flat `key = value` text. Lines starting with
// '#' are comments. Unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "n2uq/nn.hpp"
#include "n2uq/optim.hpp"

namespace n2uq {

struct TrainConfig {
  // Comma-separated `kind:in:out` entries, kind in {linear, conv3x3}.
  std::string layers = "linear:2:32,linear:32:32,linear:32:2";
  std::string input_shape;  // "channels,height,width"; required for conv3x3 layers
  int bits_w = 2;           // >= 32 means full precision
  int bits_a = 2;
  std::string quantizer = "n2uq";  // n2uq (learnable thresholds) | uniform (fixed thresholds)
  std::string weight_scheme = "entropy";

  int epochs = 20;
  int batch_size = 64;
  double lr = 2.5e-3;
  double quant_lr_factor = 0.1;
  double weight_decay = 0.0;
  AdamConfig adam;
  std::uint64_t seed = 1;

  // synthetic | csv | idx
  std::string dataset = "synthetic";
  std::string train_csv, test_csv;
  std::string train_images, train_labels, test_images, test_labels;
  int synthetic_train = 1000;
  int synthetic_test = 1000;
  int synthetic_dim = 2;
  int synthetic_classes = 2;
  double synthetic_spread = 0.3;

  std::string checkpoint;  // output path; empty disables saving
  std::string metrics;     // metrics CSV path; empty disables
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);
// Canonical text: every key, fixed order, round-trips through parse_config.
std::string to_text(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

std::vector<LayerSpec> layer_specs(const TrainConfig& cfg);
NetworkOptions network_options(const TrainConfig& cfg);

}  // namespace n2uq
