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

#include "n2uq/packed_model.hpp"

#include <algorithm>

#include "n2uq/checkpoint.hpp"
#include "n2uq/errors.hpp"
#include "n2uq/weight_quantizer.hpp"

namespace n2uq {

namespace {

constexpr char kMagic[8] = {'N', '2', 'U', 'Q', 'P', 'A', 'C', 'K'};

std::vector<double> as_vector(const Matrix<double>& m) { return {m.data(), m.data() + m.size()}; }

void put_f32s(std::vector<std::uint8_t>& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) io::put_f32(out, static_cast<float>(data[i]));
}

std::vector<double> get_f32s(io::Reader& r, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.f32();
  return v;
}

Matrix<double> row_matrix(const std::vector<double>& v) {
  return Eigen::Map<const Matrix<double>>(v.data(), 1, static_cast<Index>(v.size()));
}

}  // namespace

PackedModel pack_network(const Network<double>& net) {
  PackedModel model;
  for (const auto& l : net.layers()) {
    const auto& s = l.spec;
    if (s.quantize_weights != s.quantize_acts) {
      throw ContractError("pack_network: a layer must quantize both weights and activations, or neither");
    }
    PackedLayer p;
    p.spec = s;
    p.bitwise = s.quantize_weights;
    if (p.bitwise) {
      p.act_params = l.quant_params();
      const auto codes = quantize_weights(l.weight, s.bits_w, net.options().weight_scheme,
                                          l.weight_gamma.size() ? l.weight_gamma(0, 0) : 1.0);
      p.linear = pack_linear(codes, s.bits_a, p.act_params.out_scale(), as_vector(l.bias), as_vector(l.channel_scale));
    } else {
      p.weight = l.weight;
      p.bias = as_vector(l.bias);
    }
    p.has_rprelu = l.has_rprelu;
    if (p.has_rprelu) {
      p.act_gamma = l.act_gamma;
      p.act_slope = l.act_slope;
      p.act_shift = l.act_shift;
    }
    model.layers.push_back(std::move(p));
  }
  return model;
}

Matrix<double> PackedModel::predict(const Matrix<double>& input) const {
  if (layers.empty()) throw ContractError("packed model: no layers");
  if (input.cols() != layers.front().spec.in_features()) throw DimensionError("packed model: input width mismatch");
  const Index batch = input.rows();
  Matrix<double> h = input;
  for (const auto& l : layers) {
    const auto& s = l.spec;
    const bool conv = s.kind == LayerKind::Conv3x3;
    Matrix<double> z;
    if (l.bitwise) {
      ActivationCodes<double> codes = quantize_forward(h, l.act_params);
      if (conv) codes.codes = im2col3x3_values(codes.codes, s.in, s.height, s.width);
      z = infer_linear(l.linear, codes);
      if (conv) z = pixels_to_channels_values(z, batch, s.pixels());
    } else {
      const Matrix<double> cols = conv ? im2col3x3_values(h, s.in, s.height, s.width) : h;
      z = cols * l.weight.transpose();
      if (conv) z = pixels_to_channels_values(z, batch, s.pixels());
      for (Index col = 0; col < z.cols(); ++col) z.col(col).array() += l.bias[static_cast<std::size_t>(col / s.pixels())];
    }
    if (l.has_rprelu) z = rprelu_values(z, l.act_gamma, l.act_slope, l.act_shift, s.pixels());
    h = std::move(z);
  }
  return h;
}

std::vector<std::uint8_t> serialize(const PackedModel& model) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  io::put_u32(out, kPackedVersion);
  io::put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    const auto& s = l.spec;
    io::put_u32(out, l.bitwise ? 1 : 0);
    io::put_u32(out, s.kind == LayerKind::Conv3x3 ? 1 : 0);
    for (int v : {s.in, s.out, s.height, s.width}) io::put_u32(out, static_cast<std::uint32_t>(v));
    io::put_u32(out, l.bitwise ? static_cast<std::uint32_t>(s.bits_a) : 0);
    io::put_u32(out, l.bitwise ? static_cast<std::uint32_t>(s.bits_w) : 0);
    const auto outs = static_cast<std::size_t>(s.out);
    if (l.bitwise) {
      io::put_f32(out, static_cast<float>(l.act_params.start));
      io::put_f32(out, static_cast<float>(l.act_params.beta1));
      io::put_f32(out, static_cast<float>(l.act_params.beta2));
      put_f32s(out, l.act_params.widths.data(), l.act_params.widths.size());
      const std::size_t words = l.linear.rows.empty() ? 0 : l.linear.rows.front().words_per_plane();
      io::put_u32(out, static_cast<std::uint32_t>(words));
      for (const auto& row : l.linear.rows) {
        for (std::uint64_t w : row.words()) io::put_u64(out, w);
      }
      const std::vector<double> ones(outs, 1.0), zeros(outs, 0.0);
      const auto& row_scale = l.linear.row_scale.empty() ? ones : l.linear.row_scale;
      const auto& bias = l.linear.bias.empty() ? zeros : l.linear.bias;
      if (row_scale.size() != outs || bias.size() != outs) throw ContractError("packed model: row scale/bias length");
      put_f32s(out, row_scale.data(), outs);
      put_f32s(out, bias.data(), outs);
    } else {
      put_f32s(out, l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      put_f32s(out, l.bias.data(), l.bias.size());
    }
    io::put_u32(out, l.has_rprelu ? 1 : 0);
    if (l.has_rprelu) {
      put_f32s(out, l.act_gamma.data(), outs);
      put_f32s(out, l.act_slope.data(), outs);
      put_f32s(out, l.act_shift.data(), outs);
    }
  }
  return out;
}

PackedModel deserialize_packed(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "packed model");
  if (r.bytes(8) != std::string(kMagic, 8)) throw FormatError("packed model: bad magic at offset 0");
  const std::uint32_t version = r.u32();
  if (version != kPackedVersion) throw FormatError("packed model: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  PackedModel model;
  for (std::uint32_t i = 0; i < count; ++i) {
    PackedLayer l;
    const std::size_t at = r.offset();
    const std::uint32_t kind = r.u32();
    const std::uint32_t geometry = r.u32();
    if (kind > 1 || geometry > 1) throw FormatError("packed model: bad layer header at offset " + std::to_string(at));
    auto& s = l.spec;
    l.bitwise = kind == 1;
    s.kind = geometry == 1 ? LayerKind::Conv3x3 : LayerKind::Linear;
    s.in = static_cast<int>(r.u32());
    s.out = static_cast<int>(r.u32());
    s.height = static_cast<int>(r.u32());
    s.width = static_cast<int>(r.u32());
    const std::uint32_t m = r.u32(), k = r.u32();
    if (s.in < 1 || s.out < 1 || s.height < 1 || s.width < 1 || s.fan_in() * s.out > Index(bytes.size()) * 8) {
      throw FormatError("packed model: implausible layer dimensions at offset " + std::to_string(at));
    }
    const auto outs = static_cast<std::size_t>(s.out);
    if (l.bitwise) {
      if (m < 1 || m > kMaxPlaneBits || k < 1 || k > kMaxPlaneBits) {
        throw FormatError("packed model: bit-widths out of range at offset " + std::to_string(at));
      }
      s.quantize_acts = s.quantize_weights = true;
      s.bits_a = static_cast<int>(m);
      s.bits_w = static_cast<int>(k);
      l.act_params.bits = s.bits_a;
      l.act_params.start = r.f32();
      l.act_params.beta1 = r.f32();
      l.act_params.beta2 = r.f32();
      l.act_params.widths = get_f32s(r, (std::size_t{1} << m) - 1);
      validate(l.act_params);
      const std::size_t words = r.u32();
      const auto fan_in = static_cast<std::size_t>(s.fan_in());
      if (words != (fan_in + 63) / 64) throw FormatError("packed model: word count disagrees with fan-in");
      QuantLinearPacked& lin = l.linear;
      lin.act_bits = s.bits_a;
      lin.weight_bits = s.bits_w;
      lin.in_features = fan_in;
      lin.out_features = outs;
      lin.act_scale = l.act_params.out_scale();
      lin.weight_scale = 2.0 / static_cast<double>((1u << k) - 1);
      lin.weight_offset = -1.0;
      for (std::size_t row = 0; row < outs; ++row) {
        BitPlanes planes(fan_in, s.bits_w);
        for (auto& w : planes.words()) w = r.u64();
        if (fan_in % 64 != 0) {
          const std::uint64_t tail = ~std::uint64_t{0} << (fan_in % 64);
          for (int b = 0; b < s.bits_w; ++b) {
            if (planes.plane(b).back() & tail) throw FormatError("packed model: nonzero padding bits");
          }
        }
        lin.row_code_sums.push_back(code_sum(planes));
        lin.rows.push_back(std::move(planes));
      }
      lin.row_scale = get_f32s(r, outs);
      lin.bias = get_f32s(r, outs);
    } else {
      if (m != 0 || k != 0) throw FormatError("packed model: dense layer with bit-widths at offset " + std::to_string(at));
      l.weight.resize(s.out, s.fan_in());
      for (Index q = 0; q < l.weight.size(); ++q) l.weight.data()[q] = r.f32();
      l.bias = get_f32s(r, outs);
    }
    const std::uint32_t act = r.u32();
    if (act > 1) throw FormatError("packed model: bad activation flag at offset " + std::to_string(r.offset() - 4));
    l.has_rprelu = act == 1;
    if (l.has_rprelu) {
      l.act_gamma = row_matrix(get_f32s(r, outs));
      l.act_slope = row_matrix(get_f32s(r, outs));
      l.act_shift = row_matrix(get_f32s(r, outs));
    }
    model.layers.push_back(std::move(l));
  }
  if (!r.done()) throw FormatError("packed model: trailing bytes at offset " + std::to_string(r.offset()));
  return model;
}

void save_packed(const PackedModel& model, const std::string& path) { io::write_binary(path, serialize(model)); }

PackedModel load_packed(const std::string& path) { return deserialize_packed(io::read_binary(path)); }

double evaluate(const PackedModel& model, const Dataset& data) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  constexpr Index kBatch = 256;
  std::size_t correct = 0;
  const auto n = static_cast<Index>(data.size());
  for (Index b = 0; b < n; b += kBatch) {
    const Index rows = std::min(kBatch, n - b);
    const Matrix<double> logits = model.predict(data.features.middleRows(b, rows).cast<double>());
    for (Index r = 0; r < rows; ++r) {
      Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      if (arg == data.labels[static_cast<std::size_t>(b + r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace n2uq
