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

// muquant/config.hpp
//
// Run configuration: a JSON file layered over preset defaults, then command
// line overrides (flags win). Keys not present in the defaults are rejected.
//
// Schema (every key optional):
//   preset            "desk" | "paper"
//   seed, threads     integers
//   task, mode        "pitch" | "instrument", "FE" | "FT1" | "FT2"
//   segment           {window_seconds, hop_seconds}
//   synthetic         {timbres, pitches, base_midi, pitch_step, clips_per_cell,
//                      seconds, noise_level, kind: grid|melody, melodies,
//                      melody_seconds, min_note_seconds, max_note_seconds}
//   analysis          {segment_seconds, permutations}
//   paths             {input, output, manifest, checkpoint, data, validation,
//                      log, checkpoint_dir}
//   train             TrainConfig fields (see training.hpp)
//   model             {encoder, quantizer, context} as in model.hpp

#ifndef MUQUANT_CONFIG_HPP_
#define MUQUANT_CONFIG_HPP_

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "muquant/model.hpp"
#include "muquant/training.hpp"

namespace muquant {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Dotted key ("train.batch_size") and its textual value.
using Override = std::pair<std::string, std::string>;

class RunConfig {
 public:
  /// Defaults for `preset` ("desk" or "paper").
  static nlohmann::json defaults(const std::string& preset);

  /// Merges `file` and then `overrides` onto the defaults of the selected
  /// preset and validates the result. Throws ConfigError naming the key.
  static RunConfig resolve(const nlohmann::json& file, const std::vector<Override>& overrides);
  static nlohmann::json load_file(const std::filesystem::path& path);

  const nlohmann::json& json() const { return resolved_; }
  ModelConfig model() const;
  TrainConfig train() const;
  std::string path(const std::string& name) const;
  const nlohmann::json& at(const std::string& dotted) const;

 private:
  nlohmann::json resolved_;
};

}  // namespace muquant

#endif  // MUQUANT_CONFIG_HPP_
