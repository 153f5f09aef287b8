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

// Versioned checkpoint container. Layout (little-endian):
//
//   magic "N2UQCKPT" | u32 version | u64 seed | u64 step
//   u32 config length | config text (key = value echo)
//   u32 entry count | entries
//
// entry: u32 name length | name | u32 ndim | u32 dims[ndim] | f32 data[prod(dims)]

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace n2uq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string config;
  std::vector<TensorEntry> tensors;

  const TensorEntry* find(const std::string& name) const;
  const TensorEntry& at(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Little-endian byte helpers shared by the binary containers.
namespace io {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_bytes(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> bytes);

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string bytes(std::size_t n);
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n);
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_binary(const std::string& path);
void write_binary(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace io

}  // namespace n2uq
