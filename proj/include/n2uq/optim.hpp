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

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>

#include "n2uq/errors.hpp"
#include "n2uq/tensor.hpp"

namespace n2uq {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamMoments {
  Matrix<Scalar> m;
  Matrix<Scalar> v;
};

// One bias-corrected Adam update at step t (t >= 1).
template <typename Scalar>
void adam_step(Matrix<Scalar>& param, const std::type_identity_t<Matrix<Scalar>>& grad, AdamMoments<Scalar>& state,
               std::uint64_t t, double lr, const AdamConfig& cfg = {}, const std::string& name = "parameter") {
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
    throw DimensionError("adam_step: gradient shape differs for " + name);
  }
  if (t < 1) throw ContractError("adam_step: step count starts at 1");
  if (!grad.allFinite()) throw DivergenceError("adam_step: non-finite gradient for " + name);
  if (state.m.size() == 0) {
    state.m = Matrix<Scalar>::Zero(param.rows(), param.cols());
    state.v = Matrix<Scalar>::Zero(param.rows(), param.cols());
  }
  const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grad;
  state.v = b2 * state.v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const auto step = static_cast<Scalar>(lr / c1);
  const auto root_c2 = static_cast<Scalar>(std::sqrt(c2));
  const auto eps = static_cast<Scalar>(cfg.eps);
  param.array() -= step * state.m.array() / (state.v.array().sqrt() / root_c2 + eps);
}

// Linear decay from base_lr at step 0 to 0 at total_steps.
inline double lr_at(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps) throw ContractError("lr_at: step must lie in [0, total_steps]");
  return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace n2uq
