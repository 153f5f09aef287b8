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

#include "n2uq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "n2uq/errors.hpp"

namespace n2uq {

namespace io {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_bytes(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> bytes) {
  out.insert(out.end(), bytes.begin(), bytes.end());
}

void Reader::need(std::size_t n) {
  if (bytes_.size() - pos_ < n) {
    throw FormatError(what_ + ": truncated at offset " + std::to_string(pos_) + " (need " + std::to_string(n) +
                      " bytes)");
  }
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
  pos_ += 8;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("file not found: '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace io

namespace {

constexpr char kMagic[8] = {'N', '2', 'U', 'Q', 'C', 'K', 'P', 'T'};

}  // namespace

const TensorEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorEntry& Checkpoint::at(const std::string& name) const {
  const TensorEntry* t = find(name);
  if (!t) throw FormatError("checkpoint: missing tensor '" + name + "'");
  return *t;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  io::put_u32(out, ckpt.version);
  io::put_u64(out, ckpt.seed);
  io::put_u64(out, ckpt.step);
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.config.size()));
  io::put_bytes(out, {reinterpret_cast<const std::uint8_t*>(ckpt.config.data()), ckpt.config.size()});
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw ContractError("checkpoint: tensor '" + t.name + "' dims disagree with data");
    io::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    io::put_bytes(out, {reinterpret_cast<const std::uint8_t*>(t.name.data()), t.name.size()});
    io::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) io::put_u32(out, d);
    for (float v : t.data) io::put_f32(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.bytes(8) != std::string(kMagic, 8)) throw FormatError("checkpoint: bad magic at offset 0");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.version) + " at offset 8");
  }
  ckpt.seed = r.u64();
  ckpt.step = r.u64();
  ckpt.config = r.bytes(r.u32());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorEntry t;
    t.name = r.bytes(r.u32());
    const std::uint32_t ndim = r.u32();
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      t.dims.push_back(r.u32());
      count *= t.dims.back();
    }
    if (count > bytes.size()) throw FormatError("checkpoint: tensor '" + t.name + "' larger than file");
    t.data.resize(count);
    for (auto& v : t.data) v = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) { io::write_binary(path, serialize(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_binary(path)); }

}  // namespace n2uq
