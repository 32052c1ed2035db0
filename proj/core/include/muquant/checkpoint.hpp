// Copyright 2026  muquant authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// muquant/checkpoint.hpp
//
// Binary checkpoint container, all integers little-endian:
//
//   "MQW1"                       4-byte magic
//   version                      u32 (currently 1)
//   config length, config bytes  u64 + canonical JSON (sorted keys, compact)
//   tensor count                 u64
//   per tensor:
//     name length, name          u32 + UTF-8 bytes
//     rank, dims                 u32 + rank x u64
//     values                     product(dims) x IEEE-754 float32
//
// The JSON carries the model/training configuration and a "state" object
// (step counters, seeds). Saving the same Checkpoint always yields the same
// bytes.

#ifndef MUQUANT_CHECKPOINT_HPP_
#define MUQUANT_CHECKPOINT_HPP_

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/tensor.hpp"

namespace muquant {

inline constexpr char kCheckpointMagic[4] = {'M', 'Q', 'W', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
  void put(NamedArray array);
  /// Values of every tensor whose name starts with `prefix` (prefix kept).
  std::map<std::string, std::vector<float>> values(const std::string& prefix = "") const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace muquant

#endif  // MUQUANT_CHECKPOINT_HPP_
