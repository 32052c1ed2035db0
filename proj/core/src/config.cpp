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

#include "muquant/config.hpp"

#include <fstream>
#include <sstream>

namespace muquant {

namespace {

std::vector<std::string> split_key(const std::string& dotted) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  return parts;
}

const char* type_name(const nlohmann::json& j) { return j.type_name(); }

bool same_kind(const nlohmann::json& def, const nlohmann::json& value) {
  if (def.is_number_float()) return value.is_number();
  if (def.is_number_unsigned() || def.is_number_integer()) {
    return value.is_number_unsigned() || (value.is_number_integer() && value.get<long long>() >= 0);
  }
  return def.type() == value.type();
}

// Recursively overlays `src` onto `dst`; every key must already exist.
void merge(nlohmann::json& dst, const nlohmann::json& src, const std::string& prefix) {
  if (!src.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!dst.contains(key)) throw ConfigError(path, "unknown key '" + path + "'");
    auto& slot = dst[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else if (!same_kind(slot, value)) {
      throw ConfigError(path, "key '" + path + "' expects " + type_name(slot) + ", got " +
                                  type_name(value));
    } else {
      slot = value;
    }
  }
}

nlohmann::json parse_override(const nlohmann::json& def, const std::string& key,
                              const std::string& text) {
  try {
    if (def.is_string()) return text;
    if (def.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
    } else if (def.is_number_float()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else if (def.is_number()) {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(text, &used);
      if (used == text.size() && text.find('-') == std::string::npos) return v;
    } else {
      return nlohmann::json::parse(text);
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "cannot parse '" + text + "' for key '" + key + "' (expects " +
                             type_name(def) + ")");
}

nlohmann::json& locate(nlohmann::json& root, const std::string& dotted) {
  nlohmann::json* node = &root;
  for (const auto& part : split_key(dotted)) {
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError(dotted, "unknown key '" + dotted + "'");
    }
    node = &(*node)[part];
  }
  return *node;
}

void check(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ConfigError(key, "invalid value for '" + key + "': " + message);
}

void validate(const nlohmann::json& j) {
  const auto& t = j.at("train");
  for (const char* k : {"learning_rate", "backbone_learning_rate", "head_learning_rate",
                        "fe_learning_rate"}) {
    check(t.at(k).get<double>() > 0, std::string("train.") + k, "must be > 0");
  }
  check(t.at("batch_size").get<std::size_t>() >= 1, "train.batch_size", "must be >= 1");
  check(t.at("patience").get<std::size_t>() >= 1, "train.patience", "must be >= 1");
  check(t.at("mask_span").get<std::size_t>() >= 1, "train.mask_span", "must be >= 1");
  check(t.at("num_negatives").get<std::size_t>() >= 1, "train.num_negatives", "must be >= 1");
  check(t.at("kappa").get<double>() > 0, "train.kappa", "must be > 0");
  const double p = t.at("mask_prob").get<double>();
  check(p >= 0 && p <= 1, "train.mask_prob", "must lie in [0, 1]");
  check(t.at("clip_seconds").get<double>() > 0, "train.clip_seconds", "must be > 0");
  check(j.at("segment").at("window_seconds").get<double>() > 0, "segment.window_seconds",
        "must be > 0");
  check(j.at("segment").at("hop_seconds").get<double>() > 0, "segment.hop_seconds",
        "must be > 0");
  check(j.at("analysis").at("segment_seconds").get<double>() > 0, "analysis.segment_seconds",
        "must be > 0");
  const auto kind = j.at("synthetic").at("kind").get<std::string>();
  check(kind == "grid" || kind == "melody", "synthetic.kind", "expected grid|melody");
  const auto task = j.at("task").get<std::string>();
  check(task == "pitch" || task == "instrument", "task", "expected pitch|instrument");
  const auto mode = j.at("mode").get<std::string>();
  check(mode == "FE" || mode == "FT1" || mode == "FT2", "mode", "expected FE|FT1|FT2");
  try {
    auto t = j.at("train");
    t["seed"] = j.at("seed");
    (void)t.get<TrainConfig>();
  } catch (const std::exception& e) {
    throw ConfigError("train", e.what());
  }
  try {
    (void)j.at("model").get<ModelConfig>();
  } catch (const std::exception& e) {
    throw ConfigError("model", e.what());
  }
}

}  // namespace

nlohmann::json RunConfig::defaults(const std::string& preset) {
  if (preset != "desk" && preset != "paper") {
    throw ConfigError("preset", "unknown preset '" + preset + "' (expected desk|paper)");
  }
  const bool desk = preset == "desk";
  nlohmann::json j;
  j["preset"] = preset;
  j["seed"] = std::uint64_t{0};
  j["threads"] = std::uint64_t{0};
  j["task"] = "pitch";
  j["mode"] = "FE";
  j["segment"] = {{"window_seconds", 20.0}, {"hop_seconds", 10.0}};
  j["synthetic"] = {{"timbres", std::uint64_t{4}},       {"pitches", std::uint64_t{16}},
                    {"base_midi", std::uint64_t{48}},    {"pitch_step", std::uint64_t{1}},
                    {"clips_per_cell", std::uint64_t{1}}, {"seconds", 4.0},
                    {"noise_level", 0.01},
                    {"kind", "grid"},
                    {"melodies", std::uint64_t{32}},
                    {"melody_seconds", 8.0},
                    {"min_note_seconds", 0.1},
                    {"max_note_seconds", 0.3}};
  j["analysis"] = {{"segment_seconds", 4.0}, {"permutations", std::uint64_t{1000}}};
  j["paths"] = {{"input", ""},      {"output", ""},     {"manifest", ""},
                {"checkpoint", ""}, {"data", ""},       {"validation", ""},
                {"log", ""},        {"checkpoint_dir", ""}};
  j["train"] = desk ? TrainConfig::desk() : TrainConfig::paper();
  j["train"].erase("seed");
  j["model"] = desk ? ModelConfig::desk() : ModelConfig::paper();
  j["model"].erase("preset");
  return j;
}

RunConfig RunConfig::resolve(const nlohmann::json& file, const std::vector<Override>& overrides) {
  std::string preset = "desk";
  if (file.is_object() && file.contains("preset")) {
    if (!file.at("preset").is_string()) throw ConfigError("preset", "preset must be a string");
    preset = file.at("preset").get<std::string>();
  }
  for (const auto& [key, value] : overrides) {
    if (key == "preset") preset = value;
  }
  RunConfig rc;
  rc.resolved_ = defaults(preset);
  if (!file.is_null()) merge(rc.resolved_, file, "");
  for (const auto& [key, value] : overrides) {
    auto& slot = locate(rc.resolved_, key);
    if (slot.is_object()) throw ConfigError(key, "key '" + key + "' is a section");
    slot = parse_override(slot, key, value);
  }
  validate(rc.resolved_);
  return rc;
}

nlohmann::json RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", std::string("malformed config file: ") + e.what());
  }
}

ModelConfig RunConfig::model() const {
  auto j = resolved_.at("model");
  j["preset"] = resolved_.at("preset");
  return j.get<ModelConfig>();
}

TrainConfig RunConfig::train() const {
  auto j = resolved_.at("train");
  j["seed"] = resolved_.at("seed");
  auto c = j.get<TrainConfig>();
  c.threads = resolved_.at("threads").get<std::size_t>();
  return c;
}

std::string RunConfig::path(const std::string& name) const {
  return resolved_.at("paths").at(name).get<std::string>();
}

const nlohmann::json& RunConfig::at(const std::string& dotted) const {
  const nlohmann::json* node = &resolved_;
  for (const auto& part : split_key(dotted)) node = &node->at(part);
  return *node;
}

}  // namespace muquant
