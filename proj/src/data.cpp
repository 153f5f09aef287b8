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

#include "n2uq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <iterator>
#include <numbers>
#include <sstream>

#include "n2uq/errors.hpp"
#include "n2uq/stochastic.hpp"

namespace n2uq {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

IdxArray read_idx(const std::string& path) {
  const auto bytes = read_file(path);
  IdxArray arr;
  arr.magic = read_be32(bytes, 0, path);
  if ((arr.magic & 0xFFFFFF00u) != 0x00000800u || (arr.magic & 0xFFu) == 0) {
    std::ostringstream msg;
    msg << path << ": bad IDX magic 0x" << std::hex << arr.magic << " at offset 0";
    throw FormatError(msg.str());
  }
  const std::uint32_t ndim = arr.magic & 0xFFu;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    arr.dims.push_back(read_be32(bytes, 4 + 4 * i, path));
    count *= arr.dims.back();
  }
  const std::size_t offset = 4 + 4 * std::size_t{ndim};
  if (bytes.size() != offset + count) {
    throw FormatError(path + ": payload at offset " + std::to_string(offset) + " holds " +
                      std::to_string(bytes.size() - std::min(bytes.size(), offset)) + " bytes, expected " +
                      std::to_string(count));
  }
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return arr;
}

void write_idx(const std::string& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  auto be32 = [&](std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
  };
  be32(array.magic);
  for (auto d : array.dims) be32(d);
  out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size()));
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const IdxArray images = read_idx(images_path);
  const IdxArray labels = read_idx(labels_path);
  if (images.magic != kIdxImagesMagic) throw FormatError(images_path + ": expected a 3-dim u8 image tensor (0x00000803)");
  if (labels.magic != kIdxLabelsMagic) throw FormatError(labels_path + ": expected a u8 label vector (0x00000801)");
  if (images.dims[0] != labels.dims[0]) {
    throw FormatError(labels_path + ": " + std::to_string(labels.dims[0]) + " labels for " +
                      std::to_string(images.dims[0]) + " images");
  }
  Dataset ds;
  const Index n = images.dims[0];
  const Index pixels = Index{images.dims[1]} * images.dims[2];
  ds.shape = {1, static_cast<int>(images.dims[1]), static_cast<int>(images.dims[2])};
  ds.features.resize(n, pixels);
  for (Index k = 0; k < ds.features.size(); ++k) ds.features.data()[k] = images.data[k] / 255.0f;
  ds.labels.assign(labels.data.begin(), labels.data.end());
  for (int y : ds.labels) ds.classes = std::max(ds.classes, y + 1);
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": not a number: '" + cell + "'");
      }
    }
    if (values.size() < 2) throw FormatError(path + ":" + std::to_string(line_no) + ": need a label and features");
    if (!rows.empty() && values.size() != rows.front().size() + 1) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    const double label = values.front();
    if (label < 0 || label != std::floor(label)) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": label must be a nonnegative integer");
    }
    ds.labels.push_back(static_cast<int>(label));
    rows.emplace_back(values.begin() + 1, values.end());
  }
  if (rows.empty()) {
    ds.shape = {1, 1, 0};
    return ds;
  }
  const Index dim = static_cast<Index>(rows.front().size());
  ds.features.resize(static_cast<Index>(rows.size()), dim);
  double lo = rows.front().front(), hi = lo;
  for (const auto& r : rows) {
    for (double v : r) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const bool unit = lo >= 0.0 && hi <= 1.0;
  const double span = hi > lo ? hi - lo : 1.0;
  for (Index r = 0; r < ds.features.rows(); ++r) {
    for (Index c = 0; c < dim; ++c) {
      const double v = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      ds.features(r, c) = static_cast<float>(unit ? v : (v - lo) / span);
    }
  }
  ds.shape = {1, 1, static_cast<int>(dim)};
  for (int y : ds.labels) ds.classes = std::max(ds.classes, y + 1);
  return ds;
}

Dataset make_gaussian_mixture(std::size_t samples, int dim, int classes, double spread, std::uint64_t seed,
                              std::uint64_t stream) {
  if (dim < 1 || classes < 2) throw ContractError("make_gaussian_mixture: need dim >= 1 and classes >= 2");
  // Class means come from the seed alone; `stream` picks an independent
  // sample draw so train and test splits share the same task.
  // Of 64 candidate draws in [-1, 1]^dim keep the one whose closest pair of
  // means is farthest apart, so no two classes collapse onto each other.
  CounterRng mean_rng(seed);
  Matrix<double> means(classes, dim);
  double best = -1.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Matrix<double> cand(classes, dim);
    for (Index k = 0; k < cand.size(); ++k) cand.data()[k] = 2.0 * mean_rng.uniform() - 1.0;
    double closest = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < classes; ++a) {
      for (Index b = a + 1; b < classes; ++b) closest = std::min(closest, (cand.row(a) - cand.row(b)).norm());
    }
    if (closest > best) {
      best = closest;
      means = cand;
    }
  }
  CounterRng rng(seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
  auto normal = [&] {
    // Box-Muller; u1 in (0, 1].
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  };
  Dataset ds;
  ds.classes = classes;
  ds.shape = {1, 1, dim};
  ds.features.resize(static_cast<Index>(samples), dim);
  ds.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    ds.labels[i] = y;
    for (Index c = 0; c < dim; ++c) {
      ds.features(static_cast<Index>(i), c) = static_cast<float>(means(y, c) + spread * normal());
    }
  }
  return ds;
}

}  // namespace n2uq
