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


#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "n2uq/checkpoint.hpp"
#include "n2uq/config.hpp"
#include "n2uq/data.hpp"
#include "n2uq/errors.hpp"
#include "n2uq/packed_model.hpp"
#include "n2uq/train.hpp"

using namespace n2uq;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("n2uq_io_" + name); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

TrainConfig small_config(int bits) {
  TrainConfig cfg;
  cfg.layers = "linear:2:16,linear:16:16,linear:16:16,linear:16:2";
  cfg.bits_w = cfg.bits_a = bits;
  cfg.epochs = 3;
  cfg.synthetic_train = 300;
  cfg.synthetic_test = 200;
  return cfg;
}

}  // namespace

TEST_CASE("IDX fixture round-trips") {
  const auto images = temp_path("images.idx"), labels = temp_path("labels.idx");
  IdxArray img;
  img.magic = kIdxImagesMagic;
  img.dims = {4, 28, 28};
  img.data.resize(4 * 28 * 28);
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = static_cast<std::uint8_t>(k % 256);
  IdxArray lab;
  lab.magic = kIdxLabelsMagic;
  lab.dims = {4};
  lab.data = {3, 1, 4, 1};
  write_idx(images.string(), img);
  write_idx(labels.string(), lab);

  const auto back = read_idx(images.string());
  CHECK(back.magic == kIdxImagesMagic);
  CHECK(back.dims == std::vector<std::uint32_t>{4, 28, 28});
  CHECK(back.data == img.data);

  // Big-endian header on disk.
  std::ifstream raw(images, std::ios::binary);
  unsigned char head[8];
  raw.read(reinterpret_cast<char*>(head), 8);
  CHECK(head[2] == 0x08);
  CHECK(head[3] == 0x03);
  CHECK(head[7] == 4);

  const Dataset ds = load_idx(images.string(), labels.string());
  CHECK(ds.size() == 4);
  CHECK(ds.features.rows() == 4);
  CHECK(ds.features.cols() == 28 * 28);
  CHECK(ds.shape == std::array<int, 3>{1, 28, 28});
  CHECK(ds.labels == std::vector<int>{3, 1, 4, 1});
  CHECK(ds.features(0, 255) == doctest::Approx(1.0f));
  CHECK(ds.features.maxCoeff() <= 1.0f);
  CHECK(ds.features.minCoeff() >= 0.0f);

  lab.dims = {3};
  lab.data = {3, 1, 4};
  write_idx(labels.string(), lab);
  CHECK_THROWS_AS(load_idx(images.string(), labels.string()), FormatError);
  fs::remove(images);
  fs::remove(labels);
}

TEST_CASE("IDX format errors") {
  const auto p = temp_path("bad.idx");
  write_text(p, std::string("\x00\x00\x09\x03\x00\x00\x00\x01", 8));
  CHECK_THROWS_AS(read_idx(p.string()), FormatError);
  // Declares 2x2 bytes, supplies one.
  write_text(p, std::string("\x00\x00\x08\x02\x00\x00\x00\x02\x00\x00\x00\x02\x07", 13));
  try {
    read_idx(p.string());
    FAIL("truncated file accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  fs::remove(p);
  CHECK_THROWS_AS(read_idx(temp_path("missing.idx").string()), FormatError);
}

TEST_CASE("CSV loading") {
  const auto p = temp_path("data.csv");
  write_text(p, "1,0.0,0.5\n0,1.0,0.25\n");
  const Dataset a = load_csv(p.string());
  CHECK(a.size() == 2);
  CHECK(a.labels == std::vector<int>{1, 0});
  CHECK(a.classes == 2);
  CHECK(a.features(0, 1) == doctest::Approx(0.5f));

  write_text(p, "0,-2,10\n1,2,0\n");
  const Dataset b = load_csv(p.string());
  CHECK(b.features.minCoeff() == 0.0f);
  CHECK(b.features.maxCoeff() == 1.0f);

  write_text(p, "");
  const Dataset e = load_csv(p.string());
  CHECK(e.size() == 0);
  TrainConfig cfg;
  cfg.dataset = "csv";
  cfg.train_csv = p.string();
  CHECK_THROWS(train(cfg));

  write_text(p, "0,1,2\n1,3\n");
  CHECK_THROWS_AS(load_csv(p.string()), FormatError);
  fs::remove(p);
}

TEST_CASE("config parsing and echo") {
  const TrainConfig c = parse_config("# comment\nepochs = 7\n\nbits_w=3\nlr=0.01\nweight_scheme = tanh_max\n");
  CHECK(c.epochs == 7);
  CHECK(c.bits_w == 3);
  CHECK(c.lr == 0.01);
  CHECK(c.weight_scheme == "tanh_max");
  CHECK(c.quant_lr_factor == doctest::Approx(0.1));
  CHECK(c.weight_decay == 0.0);
  const TrainConfig again = parse_config(to_text(c));
  CHECK(to_text(again) == to_text(c));
  CHECK(to_text(c).find("adam_beta1 = 0.9") != std::string::npos);

  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ContractError);
  CHECK_THROWS_AS(parse_config("epochs\n"), ContractError);
  CHECK_THROWS_AS(load_config(temp_path("missing.cfg").string()), FormatError);

  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(validate(bad), ContractError);
  bad = TrainConfig{};
  bad.lr = -1;
  CHECK_THROWS_AS(validate(bad), ContractError);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  TrainConfig cfg = small_config(2);
  cfg.checkpoint = p1.string();
  const auto r = train(cfg);
  const auto loaded = load_checkpoint(p1.string());
  save_checkpoint(loaded, p2.string());
  CHECK(io::read_binary(p1.string()) == io::read_binary(p2.string()));
  CHECK(loaded.step == r.optimizer.step);
  CHECK(loaded.seed == cfg.seed);
  CHECK(loaded.find("adam.m.layer0.weight") != nullptr);
  CHECK(loaded.find("layer1.quant.widths") != nullptr);
  CHECK(config_from_checkpoint(loaded).epochs == 3);

  // The rebuilt double network reproduces the trained one.
  Network<double> a = network_from_checkpoint(loaded);
  Network<double> b = r.network.cast<double>();
  const auto data = load_data(cfg);
  CHECK(evaluate(a, data.test) == evaluate(b, data.test));

  auto bytes = io::read_binary(p1.string());
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), FormatError);
  bytes = io::read_binary(p1.string());
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), FormatError);
  bytes = io::read_binary(p1.string());
  bytes.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt").string()), FormatError);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("packed container round-trips bit-exactly and matches the checkpoint") {
  for (int bits : {1, 2, 3, 4}) {
    TrainConfig cfg = small_config(bits);
    const auto r = train(cfg);
    const PackedModel model = pack_network(network_from_checkpoint(r.checkpoint));
    const auto bytes = serialize(model);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "N2UQPACK");
    const PackedModel back = deserialize_packed(bytes);
    CHECK(serialize(back) == bytes);
    CHECK(back.layers[1].bitwise);
    CHECK_FALSE(back.layers[0].bitwise);
    CHECK_FALSE(back.layers[3].bitwise);

    const auto data = load_data(cfg);
    CHECK(std::abs(evaluate(back, data.test) - evaluate(r.checkpoint, data.test)) <= 1e-6);
    Network<double> net = network_from_checkpoint(r.checkpoint);
    const Matrix<double> x = data.test.features.topRows(50).cast<double>();
    CHECK((back.predict(x) - net.predict(x)).cwiseAbs().maxCoeff() < 1e-9);

    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(deserialize_packed(truncated), FormatError);
  }
}

TEST_CASE("packed container rejects set padding bits") {
  TrainConfig cfg = small_config(2);
  cfg.epochs = 1;
  const auto r = train(cfg);
  const PackedModel model = pack_network(network_from_checkpoint(r.checkpoint));
  // 16 inputs per row, so the top 48 bits of each plane word are padding.
  PackedModel tampered = model;
  tampered.layers[1].linear.rows[0].words()[0] |= std::uint64_t{1} << 63;
  CHECK_THROWS_AS(deserialize_packed(serialize(tampered)), FormatError);
}

TEST_CASE("pack_network needs both weights and activations quantized") {
  std::vector<LayerSpec> specs(3);
  for (auto& s : specs) s.in = s.out = 4;
  specs[1].quantize_weights = true;
  specs[1].bits_w = 2;
  const auto net = Network<double>::build(specs, {}, 1);
  CHECK_THROWS_AS(pack_network(net), ContractError);
}
