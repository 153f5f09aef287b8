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

#include "n2uq/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "n2uq/errors.hpp"
#include "n2uq/stochastic.hpp"

namespace n2uq {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5DEECE66DULL;
constexpr Index kEvalBatch = 256;

Dataset synthetic_split(const TrainConfig& c, int samples, std::uint64_t stream) {
  return make_gaussian_mixture(static_cast<std::size_t>(samples), c.synthetic_dim, c.synthetic_classes,
                               c.synthetic_spread, c.seed, stream);
}

std::size_t count_correct(Network<double>& net, const Dataset& data, Index begin, Index end) {
  std::size_t correct = 0;
  for (Index b = begin; b < end; b += kEvalBatch) {
    const Index n = std::min(kEvalBatch, end - b);
    const Matrix<double> x = data.features.middleRows(b, n).cast<double>();
    const Matrix<double> logits = net.predict(x);
    for (Index r = 0; r < n; ++r) {
      Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      if (arg == data.labels[static_cast<std::size_t>(b + r)]) ++correct;
    }
  }
  return correct;
}

}  // namespace

int worker_threads() {
  const char* env = std::getenv("N2UQ_THREADS");
  if (!env || !*env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

DataSplits load_data(const TrainConfig& c) {
  DataSplits d;
  if (c.dataset == "synthetic") {
    d.train = synthetic_split(c, c.synthetic_train, 0);
    d.test = synthetic_split(c, c.synthetic_test, 1);
  } else if (c.dataset == "csv") {
    d.train = load_csv(c.train_csv);
    d.test = c.test_csv.empty() ? d.train : load_csv(c.test_csv);
  } else if (c.dataset == "idx") {
    d.train = load_idx(c.train_images, c.train_labels);
    d.test = c.test_images.empty() ? d.train : load_idx(c.test_images, c.test_labels);
  } else {
    throw ContractError("unknown dataset kind '" + c.dataset + "'");
  }
  return d;
}

double accuracy(const Matrix<double>& logits, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw DimensionError("accuracy: one label per row");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index arg = 0;
    logits.row(r).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(Network<double>& net, const Dataset& data) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  const Index n = static_cast<Index>(data.size());
  const int threads = std::min<int>(worker_threads(), static_cast<int>((n + kEvalBatch - 1) / kEvalBatch));
  if (threads <= 1) return static_cast<double>(count_correct(net, data, 0, n)) / static_cast<double>(n);

  const Index batches = (n + kEvalBatch - 1) / kEvalBatch;
  std::vector<std::size_t> correct(static_cast<std::size_t>(threads), 0);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    const Index begin = std::min(n, batches * t / threads * kEvalBatch);
    const Index end = std::min(n, batches * (t + 1) / threads * kEvalBatch);
    pool.emplace_back([&, t, begin, end] { correct[static_cast<std::size_t>(t)] = count_correct(net, data, begin, end); });
  }
  for (auto& th : pool) th.join();
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), std::size_t{0})) /
         static_cast<double>(n);
}

Checkpoint make_checkpoint(Network<float>& net, const OptimizerState& opt, const TrainConfig& cfg) {
  Checkpoint ckpt;
  ckpt.seed = cfg.seed;
  ckpt.step = opt.step;
  ckpt.config = to_text(cfg);
  auto add = [&](const std::string& name, const Matrix<float>& m) {
    TensorEntry t;
    t.name = name;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size());
    ckpt.tensors.push_back(std::move(t));
  };
  for (const auto& p : net.params()) add(p.name, *p.value);
  for (const auto& p : net.params()) {
    const auto it = opt.moments.find(p.name);
    if (it == opt.moments.end()) continue;
    add("adam.m." + p.name, it->second.m);
    add("adam.v." + p.name, it->second.v);
  }
  return ckpt;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) { return parse_config(ckpt.config); }

Network<double> network_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig cfg = config_from_checkpoint(ckpt);
  Network<double> net = Network<double>::build(layer_specs(cfg), network_options(cfg), cfg.seed);
  for (auto& p : net.params()) {
    const TensorEntry& t = ckpt.at(p.name);
    if (t.dims.size() != 2 || t.dims[0] != p.value->rows() || t.dims[1] != p.value->cols()) {
      throw FormatError("checkpoint: tensor '" + p.name + "' has the wrong shape");
    }
    for (Index k = 0; k < p.value->size(); ++k) p.value->data()[k] = static_cast<double>(t.data[static_cast<std::size_t>(k)]);
  }
  return net;
}

double evaluate(const Checkpoint& ckpt, const Dataset& data) {
  Network<double> net = network_from_checkpoint(ckpt);
  return evaluate(net, data);
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,train_loss,eval_acc\n";
  char line[96];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f\n", m.epoch, m.train_loss, m.eval_acc);
    out += line;
  }
  return out;
}

TrainResult train(const TrainConfig& cfg) { return train(cfg, load_data(cfg)); }

TrainResult train(const TrainConfig& cfg, const DataSplits& data) {
  validate(cfg);
  const Dataset& ds = data.train;
  if (ds.size() == 0) throw ContractError("train: empty training set");
  const Dataset& test = data.test.size() ? data.test : data.train;

  TrainResult res;
  res.network = Network<float>::build(layer_specs(cfg), network_options(cfg), cfg.seed);
  Network<float>& net = res.network;
  if (ds.features.cols() != net.layers().front().spec.in_features()) {
    throw DimensionError("train: dataset has " + std::to_string(ds.features.cols()) + " features, network expects " +
                         std::to_string(net.layers().front().spec.in_features()));
  }
  for (int y : ds.labels) {
    if (y >= net.layers().back().spec.out) throw ContractError("train: label exceeds the output layer width");
  }

  std::map<const Matrix<float>*, ParamRef<float>> refs;
  for (const auto& p : net.params()) refs.emplace(p.value, p);

  const auto n = static_cast<Index>(ds.size());
  const Index batch = cfg.batch_size;
  const std::uint64_t per_epoch = static_cast<std::uint64_t>((n + batch - 1) / batch);
  const std::uint64_t total = per_epoch * static_cast<std::uint64_t>(cfg.epochs);

  CounterRng shuffle(cfg.seed ^ kShuffleStream);
  std::vector<Index> order(static_cast<std::size_t>(n));
  Checkpoint last_good = make_checkpoint(net, res.optimizer, cfg);

  auto abort_with = [&](const std::string& why) {
    if (!cfg.checkpoint.empty()) save_checkpoint(last_good, cfg.checkpoint);
    throw DivergenceError(why + (cfg.checkpoint.empty() ? "" : "; last good checkpoint written to " + cfg.checkpoint));
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.below(i))]);
    }
    double loss_sum = 0.0;
    for (Index start = 0; start < n; start += batch) {
      const Index rows = std::min(batch, n - start);
      Matrix<float> x(rows, ds.features.cols());
      std::vector<int> y(static_cast<std::size_t>(rows));
      for (Index r = 0; r < rows; ++r) {
        const Index src = order[static_cast<std::size_t>(start + r)];
        x.row(r) = ds.features.row(src);
        y[static_cast<std::size_t>(r)] = ds.labels[static_cast<std::size_t>(src)];
      }

      Tape<float> tape;
      std::vector<ParamBinding<float>> bindings;
      const Var<float> loss = softmax_cross_entropy(net.forward(tape, x, &bindings), std::span<const int>(y));
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) abort_with("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      tape.backward(loss);

      const double lr = lr_at(res.optimizer.step, total, cfg.lr);
      ++res.optimizer.step;
      try {
        for (const auto& b : bindings) {
          const ParamRef<float>& ref = refs.at(b.value);
          Matrix<float> g = b.leaf.grad();
          if (ref.group == ParamGroup::Weight && cfg.weight_decay > 0) g += static_cast<float>(cfg.weight_decay) * *b.value;
          const double step_lr = ref.group == ParamGroup::Quantizer ? lr * cfg.quant_lr_factor : lr;
          adam_step(*b.value, g, res.optimizer.moments[ref.name], res.optimizer.step, step_lr, cfg.adam, ref.name);
        }
      } catch (const DivergenceError& e) {
        abort_with(e.what());
      }
      for (auto& l : net.layers()) {
        if (l.q_widths.size()) l.set_quant_params(clamp_params(l.quant_params()));
      }
      loss_sum += value * static_cast<double>(rows);
    }

    Network<double> eval_net = net.cast<double>();
    res.metrics.push_back({epoch, loss_sum / static_cast<double>(n), evaluate(eval_net, test)});
    last_good = make_checkpoint(net, res.optimizer, cfg);
  }

  res.checkpoint = last_good;
  if (!cfg.checkpoint.empty()) save_checkpoint(res.checkpoint, cfg.checkpoint);
  if (!cfg.metrics.empty()) {
    std::ofstream out(cfg.metrics, std::ios::binary);
    if (!out) throw FormatError("cannot write metrics to '" + cfg.metrics + "'");
    out << metrics_csv(res.metrics);
  }
  return res;
}

}  // namespace n2uq
