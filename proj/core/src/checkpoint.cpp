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

#include "muquant/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace muquant {

namespace {

static_assert(sizeof(float) == 4, "float32 required");

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U le() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedArray& Checkpoint::at(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw CheckpointError("checkpoint: no tensor named '" + name + "'");
  return *t;
}

void Checkpoint::put(NamedArray array) {
  if (numel(array.shape) != array.values.size()) {
    throw ShapeError("Checkpoint::put", array.name, numel(array.shape), array.values.size());
  }
  for (auto& t : tensors) {
    if (t.name == array.name) {
      t = std::move(array);
      return;
    }
  }
  tensors.push_back(std::move(array));
}

std::map<std::string, std::vector<float>> Checkpoint::values(const std::string& prefix) const {
  std::map<std::string, std::vector<float>> out;
  for (const auto& t : tensors) {
    if (t.name.compare(0, prefix.size(), prefix) == 0) out[t.name] = t.values;
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string json = ckpt.config.dump();
  put_le<std::uint64_t>(out, json.size());
  out += json;
  put_le<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_le<std::uint64_t>(out, d);
    for (float v : t.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError("checkpoint: bad magic (expected MQW1)");
  }
  const auto version = in.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto json_len = in.le<std::uint64_t>();
  try {
    ckpt.config = nlohmann::json::parse(in.take(json_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: malformed config JSON: ") + e.what());
  }
  const auto count = in.le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray t;
    t.name = in.take(in.le<std::uint32_t>());
    const auto rank = in.le<std::uint32_t>();
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(in.le<std::uint64_t>());
    std::size_t count_values = 1;
    for (auto d : t.shape) {
      if (d != 0 && count_values > in.remaining() / d) {
        throw CheckpointError("checkpoint: truncated data");
      }
      count_values *= d;
    }
    if (count_values > in.remaining() / 4) throw CheckpointError("checkpoint: truncated data");
    t.values.resize(count_values);
    for (auto& v : t.values) v = std::bit_cast<float>(in.le<std::uint32_t>());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes after last tensor");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace muquant
