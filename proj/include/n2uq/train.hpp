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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "n2uq/checkpoint.hpp"
#include "n2uq/config.hpp"
#include "n2uq/data.hpp"
#include "n2uq/nn.hpp"
#include "n2uq/optim.hpp"

namespace n2uq {

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_acc = 0.0;
};

struct OptimizerState {
  std::map<std::string, AdamMoments<float>> moments;
  std::uint64_t step = 0;
};

struct DataSplits {
  Dataset train;
  Dataset test;
};

struct TrainResult {
  Network<float> network;
  OptimizerState optimizer;
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

DataSplits load_data(const TrainConfig& cfg);

// Deterministic for a fixed config. On a non-finite loss or gradient the
// last good checkpoint (end of the previous epoch) is written to
// cfg.checkpoint and DivergenceError is thrown.
TrainResult train(const TrainConfig& cfg, const DataSplits& data);
TrainResult train(const TrainConfig& cfg);

std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

Checkpoint make_checkpoint(Network<float>& net, const OptimizerState& opt, const TrainConfig& cfg);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
Network<double> network_from_checkpoint(const Checkpoint& ckpt);

// Fraction of rows whose arg-max logit equals the label (first max wins).
double accuracy(const Matrix<double>& logits, const std::vector<int>& labels);

// Training-path evaluation in 64-bit with hard quantizers. Batches may be
// sharded over N2UQ_THREADS workers; the correct counts are summed.
double evaluate(Network<double>& net, const Dataset& data);
double evaluate(const Checkpoint& ckpt, const Dataset& data);

// N2UQ_THREADS, default 1.
int worker_threads();

}  // namespace n2uq
