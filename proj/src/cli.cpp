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


#include "n2uq/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "n2uq/checkpoint.hpp"
#include "n2uq/config.hpp"
#include "n2uq/errors.hpp"
#include "n2uq/packed_model.hpp"
#include "n2uq/selfcheck.hpp"
#include "n2uq/train.hpp"

namespace n2uq::cli {

namespace {

struct Flags {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string packed;
  std::optional<int> bits_w, bits_a;
  std::optional<std::uint64_t> seed;
  bool weights = false;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Command-line flags take precedence over keys read from --config.
TrainConfig resolve_config(const Flags& f) {
  TrainConfig cfg = f.config.empty() ? TrainConfig{} : load_config(f.config);
  if (f.bits_w) cfg.bits_w = *f.bits_w;
  if (f.bits_a) cfg.bits_a = *f.bits_a;
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.checkpoint = f.out;
  return cfg;
}

void emit(const Flags& f, const std::string& text, std::ostream& out) {
  if (f.out.empty()) {
    out << text;
    return;
  }
  std::ofstream file(f.out, std::ios::binary);
  if (!file) throw FormatError("cannot write " + f.out);
  file << text;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const TrainConfig cfg = resolve_config(f);
  const TrainResult r = train(cfg);
  out << metrics_csv(r.metrics);
  return 0;
}

// Dataset for evaluation: --config if given, else the config echoed into the checkpoint.
DataSplits eval_data(const Flags& f, const Checkpoint* ckpt) {
  if (!f.config.empty()) return load_data(resolve_config(f));
  if (ckpt == nullptr) throw ContractError("eval --packed needs --config or --checkpoint to locate the dataset");
  return load_data(config_from_checkpoint(*ckpt));
}

int cmd_eval(const Flags& f, std::ostream& out) {
  if (f.checkpoint.empty() && f.packed.empty()) throw ContractError("eval: --checkpoint or --packed is required");
  std::optional<Checkpoint> ckpt;
  if (!f.checkpoint.empty()) ckpt = load_checkpoint(f.checkpoint);
  const DataSplits data = eval_data(f, ckpt ? &*ckpt : nullptr);
  const double acc = f.packed.empty() ? evaluate(*ckpt, data.test) : evaluate(load_packed(f.packed), data.test);
  out << "accuracy," << fmt("%.9f", acc) << "\n";
  return 0;
}

int cmd_export(const Flags& f, std::ostream& out) {
  if (f.checkpoint.empty() || f.out.empty()) throw ContractError("export: --checkpoint and --out are required");
  const Network<double> net = network_from_checkpoint(load_checkpoint(f.checkpoint));
  save_packed(pack_network(net), f.out);
  out << "wrote " << f.out << "\n";
  return 0;
}

std::string interval_csv(const Network<double>& net) {
  std::ostringstream s;
  s << "layer,interval,width,segment_start,segment_end,cut_point,beta1,beta2\n";
  const auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (!layers[li].spec.quantize_acts) continue;
    const auto p = layers[li].quant_params();
    const auto d = segment_ends(p);
    const auto t = cut_points(p);
    for (std::size_t i = 0; i < p.widths.size(); ++i) {
      s << li << "," << i + 1 << "," << fmt("%.9g", p.widths[i]) << "," << fmt("%.9g", d[i]) << ","
        << fmt("%.9g", d[i + 1]) << "," << fmt("%.9g", t[i]) << "," << fmt("%.9g", p.beta1) << ","
        << fmt("%.9g", p.beta2) << "\n";
    }
  }
  return s.str();
}

std::string weight_csv(const Network<double>& net) {
  std::ostringstream s;
  s << "layer,level,value,count,occupancy,entropy_bits\n";
  const auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    if (!l.spec.quantize_weights) continue;
    const double gamma = l.weight_gamma.size() ? l.weight_gamma(0, 0) : 1.0;
    const auto q = quantize_weights(l.weight, l.spec.bits_w, net.options().weight_scheme, gamma);
    const auto occ = level_occupancy(q);
    const double h = entropy_bits(q);
    for (std::size_t c = 0; c < occ.size(); ++c) {
      const auto count = static_cast<long long>(occ[c] * static_cast<double>(q.codes.size()) + 0.5);
      s << li << "," << c << "," << fmt("%.9g", q.scale * static_cast<double>(c) + q.offset) << "," << count << ","
        << fmt("%.9g", occ[c]) << "," << fmt("%.9g", h) << "\n";
    }
  }
  return s.str();
}

int cmd_inspect(const Flags& f, std::ostream& out) {
  if (f.checkpoint.empty()) throw ContractError("inspect: --checkpoint is required");
  const Network<double> net = network_from_checkpoint(load_checkpoint(f.checkpoint));
  emit(f, f.weights ? weight_csv(net) : interval_csv(net), out);
  return 0;
}

int cmd_selfcheck(const Flags& f, std::ostream& out) {
  SelfcheckOptions opt;
  if (f.seed) opt.seed = *f.seed;
  bool ok = true;
  out << "suite,max_deviation,tolerance,cases,status\n";
  for (const auto& r : run_selfcheck(opt)) {
    out << r.name << "," << fmt("%.3e", r.max_deviation) << "," << fmt("%.1e", r.tolerance) << "," << r.cases << ","
        << (r.passed ? "PASS" : "FAIL") << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"n2uq: non-uniform quantization toolkit", "n2uq"};
  app.require_subcommand(1, 1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key=value config file");
    sub->add_option("--checkpoint", f.checkpoint, "checkpoint path");
    sub->add_option("--out", f.out, "output path");
    sub->add_option("--seed", f.seed, "RNG seed");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "train a network and write a checkpoint");
  add_common(train_cmd);
  train_cmd->add_option("--bits-w", f.bits_w, "weight bit-width (>= 32 for float)");
  train_cmd->add_option("--bits-a", f.bits_a, "activation bit-width (>= 32 for float)");
  CLI::App* eval_cmd = app.add_subcommand("eval", "test accuracy of a checkpoint or packed model");
  add_common(eval_cmd);
  eval_cmd->add_option("--packed", f.packed, "packed model produced by export");
  CLI::App* export_cmd = app.add_subcommand("export", "write a bit-packed inference container");
  add_common(export_cmd);
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "dump learned intervals or weight histograms as CSV");
  add_common(inspect_cmd);
  inspect_cmd->add_flag("--weights", f.weights, "per-level weight occupancy and entropy");
  CLI::App* self_cmd = app.add_subcommand("selfcheck", "run the oracle equivalence suites");
  self_cmd->add_option("--seed", f.seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help("", CLI::AppFormatMode::All);
    return 1;
  }

  try {
    if (*train_cmd) return cmd_train(f, out);
    if (*eval_cmd) return cmd_eval(f, out);
    if (*export_cmd) return cmd_export(f, out);
    if (*inspect_cmd) return cmd_inspect(f, out);
    if (*self_cmd) return cmd_selfcheck(f, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace n2uq::cli
