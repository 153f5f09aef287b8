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

#include "n2uq/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "n2uq/errors.hpp"

namespace n2uq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ContractError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ContractError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace

void set_config_key(TrainConfig& c, const std::string& key, const std::string& value) {
  const std::string& v = value;
  auto as_int = [&] { return static_cast<int>(to_int(key, v)); };
  if (key == "layers") c.layers = v;
  else if (key == "input_shape") c.input_shape = v;
  else if (key == "bits_w") c.bits_w = as_int();
  else if (key == "bits_a") c.bits_a = as_int();
  else if (key == "quantizer") c.quantizer = v;
  else if (key == "weight_scheme") c.weight_scheme = v;
  else if (key == "epochs") c.epochs = as_int();
  else if (key == "batch_size") c.batch_size = as_int();
  else if (key == "lr") c.lr = to_double(key, v);
  else if (key == "quant_lr_factor") c.quant_lr_factor = to_double(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "adam_beta1") c.adam.beta1 = to_double(key, v);
  else if (key == "adam_beta2") c.adam.beta2 = to_double(key, v);
  else if (key == "adam_eps") c.adam.eps = to_double(key, v);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "dataset") c.dataset = v;
  else if (key == "train_csv") c.train_csv = v;
  else if (key == "test_csv") c.test_csv = v;
  else if (key == "train_images") c.train_images = v;
  else if (key == "train_labels") c.train_labels = v;
  else if (key == "test_images") c.test_images = v;
  else if (key == "test_labels") c.test_labels = v;
  else if (key == "synthetic_train") c.synthetic_train = as_int();
  else if (key == "synthetic_test") c.synthetic_test = as_int();
  else if (key == "synthetic_dim") c.synthetic_dim = as_int();
  else if (key == "synthetic_classes") c.synthetic_classes = as_int();
  else if (key == "synthetic_spread") c.synthetic_spread = to_double(key, v);
  else if (key == "checkpoint") c.checkpoint = v;
  else if (key == "metrics") c.metrics = v;
  else throw ContractError("config: unknown key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ContractError("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config file not found: '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "layers = " << c.layers << "\n"
     << "input_shape = " << c.input_shape << "\n"
     << "bits_w = " << c.bits_w << "\n"
     << "bits_a = " << c.bits_a << "\n"
     << "quantizer = " << c.quantizer << "\n"
     << "weight_scheme = " << c.weight_scheme << "\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "lr = " << fmt_double(c.lr) << "\n"
     << "quant_lr_factor = " << fmt_double(c.quant_lr_factor) << "\n"
     << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
     << "adam_beta1 = " << fmt_double(c.adam.beta1) << "\n"
     << "adam_beta2 = " << fmt_double(c.adam.beta2) << "\n"
     << "adam_eps = " << fmt_double(c.adam.eps) << "\n"
     << "seed = " << c.seed << "\n"
     << "dataset = " << c.dataset << "\n"
     << "train_csv = " << c.train_csv << "\n"
     << "test_csv = " << c.test_csv << "\n"
     << "train_images = " << c.train_images << "\n"
     << "train_labels = " << c.train_labels << "\n"
     << "test_images = " << c.test_images << "\n"
     << "test_labels = " << c.test_labels << "\n"
     << "synthetic_train = " << c.synthetic_train << "\n"
     << "synthetic_test = " << c.synthetic_test << "\n"
     << "synthetic_dim = " << c.synthetic_dim << "\n"
     << "synthetic_classes = " << c.synthetic_classes << "\n"
     << "synthetic_spread = " << fmt_double(c.synthetic_spread) << "\n"
     << "checkpoint = " << c.checkpoint << "\n"
     << "metrics = " << c.metrics << "\n";
  return os.str();
}

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ContractError("config: epochs must be positive");
  if (c.batch_size < 1) throw ContractError("config: batch_size must be positive");
  if (!(c.lr > 0)) throw ContractError("config: lr must be positive");
  if (!(c.quant_lr_factor > 0)) throw ContractError("config: quant_lr_factor must be positive");
  if (c.weight_decay < 0) throw ContractError("config: weight_decay must be nonnegative");
  if (c.quantizer != "n2uq" && c.quantizer != "uniform") {
    throw ContractError("config: quantizer must be 'n2uq' or 'uniform'");
  }
  parse_weight_scheme(c.weight_scheme);
  if (c.dataset != "synthetic" && c.dataset != "csv" && c.dataset != "idx") {
    throw ContractError("config: dataset must be synthetic, csv or idx");
  }
  validate_specs(layer_specs(c));
}

std::vector<LayerSpec> layer_specs(const TrainConfig& c) {
  std::vector<LayerSpec> specs;
  int height = 1, width = 1;
  if (!c.input_shape.empty()) {
    const auto dims = split(c.input_shape, ',');
    if (dims.size() != 3) throw ContractError("config: input_shape must be channels,height,width");
    height = static_cast<int>(to_int("input_shape", dims[1]));
    width = static_cast<int>(to_int("input_shape", dims[2]));
  }
  const bool quant_w = c.bits_w < 32;
  const bool quant_a = c.bits_a < 32;
  const auto entries = split(c.layers, ',');
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto f = split(entries[i], ':');
    if (f.size() != 3) throw ContractError("config: layer entry '" + entries[i] + "' must be kind:in:out");
    LayerSpec s;
    if (f[0] == "linear") {
      s.kind = LayerKind::Linear;
    } else if (f[0] == "conv3x3") {
      s.kind = LayerKind::Conv3x3;
      if (c.input_shape.empty()) throw ContractError("config: conv3x3 layers need input_shape");
      s.height = height;
      s.width = width;
    } else {
      throw ContractError("config: unknown layer kind '" + f[0] + "'");
    }
    s.in = static_cast<int>(to_int("layers", f[1]));
    s.out = static_cast<int>(to_int("layers", f[2]));
    const bool inner = i > 0 && i + 1 < entries.size();
    s.quantize_weights = inner && quant_w;
    s.quantize_acts = inner && quant_a;
    s.bits_w = s.quantize_weights ? c.bits_w : 32;
    s.bits_a = s.quantize_acts ? c.bits_a : 32;
    specs.push_back(s);
  }
  return specs;
}

NetworkOptions network_options(const TrainConfig& c) {
  NetworkOptions o;
  o.weight_scheme = parse_weight_scheme(c.weight_scheme);
  o.learn_thresholds = c.quantizer == "n2uq";
  return o;
}

}  // namespace n2uq
