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

// muquant/model.hpp
//
// The full network (encoder, quantizer, context network), the pre-training
// loss graph, and the linear classification head used downstream.

#ifndef MUQUANT_MODEL_HPP_
#define MUQUANT_MODEL_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/audio.hpp"
#include "muquant/context.hpp"
#include "muquant/encoder.hpp"
#include "muquant/objective.hpp"
#include "muquant/params.hpp"
#include "muquant/quantizer.hpp"

namespace muquant {

struct ModelConfig {
  std::string preset = "desk";
  EncoderConfig encoder = EncoderConfig::desk();
  QuantizerConfig quantizer = QuantizerConfig::desk();
  ContextConfig context = ContextConfig::desk();

  static ModelConfig paper();
  static ModelConfig desk();
  static ModelConfig from_preset(const std::string& name);
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Masking, sampling and loss settings for one pre-training forward pass.
struct ObjectiveSettings {
  double mask_prob = 0.065;
  std::size_t mask_span = 10;
  std::size_t num_negatives = 100;
  double kappa = 0.1;
  QuantizeMode quantize_mode = QuantizeMode::kTrain;
};

template <typename T>
struct PretrainForward {
  LossBreakdown<T> loss;
  MaskSpec mask;
  CodeIndices codes;
  std::vector<double> perplexity;  // per group, this segment
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const FeatureEncoder<T>& encoder() const { return encoder_; }
  const Quantizer<T>& quantizer() const { return quantizer_; }
  const ContextNetwork<T>& context() const { return context_; }

  /// Handles onto every parameter, in a fixed registration order.
  ParamList<T> parameters() const;
  /// Copy whose parameters are fresh leaves (no shared gradient state).
  Model clone() const;
  /// Overwrites parameter values by name; every parameter must be present.
  template <typename Source>
  void load_values(const std::map<std::string, std::vector<Source>>& values);
  std::map<std::string, std::vector<float>> float_values() const;

  PretrainForward<T> pretrain_forward(const Waveform& wave, const ObjectiveSettings& settings,
                                      T tau, std::uint64_t seed) const;

  /// Unmasked activations: index 0 is the encoder output, index b the output
  /// of block b.
  std::vector<Tensor<T>> layer_activations(const Waveform& wave) const;
  /// Mean over time of the final block output (no masking).
  Tensor<T> pooled_features(const Waveform& wave) const;
  CodeIndices codes(const Waveform& wave) const;

 private:
  ParamRefs<T> refs();

  ModelConfig config_;
  FeatureEncoder<T> encoder_;
  Quantizer<T> quantizer_;
  ContextNetwork<T> context_;
};

enum class Task { kPitch, kInstrument };

struct HeadConfig {
  Task task = Task::kPitch;
  std::size_t num_classes = 112;

  static HeadConfig for_task(Task task);
};

std::string task_name(Task task);
Task parse_task(const std::string& name);
void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

template <typename T>
class Head {
 public:
  Head() = default;
  Head(HeadConfig config, std::size_t feature_dim, Rng& rng);

  const HeadConfig& config() const { return config_; }
  std::size_t feature_dim() const { return weight_.dim(0); }
  /// features [N x feature_dim] -> logits [N x classes].
  Tensor<T> logits(const Tensor<T>& features) const;

  ParamList<T> parameters() const;
  Head clone() const;
  template <typename Source>
  void load_values(const std::map<std::string, std::vector<Source>>& values);

 private:
  HeadConfig config_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

}  // namespace muquant

#endif  // MUQUANT_MODEL_HPP_
