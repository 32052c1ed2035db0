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

#include "muquant/model.hpp"

#include <cmath>
#include <stdexcept>

#include "muquant/ops.hpp"

namespace muquant {

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.encoder = EncoderConfig::paper();
  c.quantizer = QuantizerConfig::paper();
  c.context = ContextConfig::paper();
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown preset '" + name + "' (expected paper|desk)");
}

void ModelConfig::validate() const {
  encoder.validate();
  quantizer.validate();
  context.validate();
  if (quantizer.output_dim != context.model_dim) {
    throw std::invalid_argument("model: quantizer.output_dim (" +
                                std::to_string(quantizer.output_dim) +
                                ") must equal context.model_dim (" +
                                std::to_string(context.model_dim) + ")");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"preset", c.preset},
       {"encoder", c.encoder},
       {"quantizer", c.quantizer},
       {"context", c.context}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.preset = j.value("preset", std::string("custom"));
  c.encoder = j.at("encoder").get<EncoderConfig>();
  c.quantizer = j.at("quantizer").get<QuantizerConfig>();
  c.context = j.at("context").get<ContextConfig>();
  c.validate();
}

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  encoder_ = FeatureEncoder<T>(config_.encoder, rng);
  quantizer_ = Quantizer<T>(config_.quantizer, config_.encoder.output_dim(), rng);
  context_ = ContextNetwork<T>(config_.context, config_.encoder.output_dim(), rng);
}

template <typename T>
ParamRefs<T> Model<T>::refs() {
  ParamRefs<T> out;
  encoder_.collect(out, "encoder.");
  quantizer_.collect(out, "quantizer.");
  context_.collect(out, "context.");
  return out;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out;
  for (const auto& r : const_cast<Model*>(this)->refs()) out.push_back({r.name, *r.slot});
  return out;
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy = *this;
  for (auto& r : copy.refs()) *r.slot = r.slot->clone_leaf();
  return copy;
}

template <typename T>
template <typename Source>
void Model<T>::load_values(const std::map<std::string, std::vector<Source>>& values) {
  for (auto& r : refs()) {
    auto it = values.find(r.name);
    if (it == values.end()) throw std::invalid_argument("missing parameter '" + r.name + "'");
    if (it->second.size() != r.slot->size()) {
      throw ShapeError("load_values", r.name, r.slot->size(), it->second.size());
    }
    auto dst = r.slot->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second[i]);
  }
}

template <typename T>
std::map<std::string, std::vector<float>> Model<T>::float_values() const {
  std::map<std::string, std::vector<float>> out;
  for (const auto& p : parameters()) {
    const auto d = p.tensor.data();
    out[p.name] = std::vector<float>(d.begin(), d.end());
  }
  return out;
}

template <typename T>
PretrainForward<T> Model<T>::pretrain_forward(const Waveform& wave,
                                              const ObjectiveSettings& settings, T tau,
                                              std::uint64_t seed) const {
  PretrainForward<T> out;
  auto z = encoder_.encode(wave).values;
  out.mask = sample_mask(z.dim(0), settings.mask_prob, settings.mask_span,
                         derive_seed(seed, {0}));
  auto quantized = quantizer_.quantize(z, tau, settings.quantize_mode, derive_seed(seed, {1}));
  auto context = context_.contextualize(z, out.mask.masked_indices, false);
  auto negatives = sample_negatives(out.mask, settings.num_negatives, derive_seed(seed, {2}));
  auto loss = contrastive_loss(context.values, quantized.values, negatives, static_cast<T>(settings.kappa));
  const double weight = config_.quantizer.diversity_weight;
  if (weight > 0) {
    loss = combine_losses(std::move(loss), diversity_penalty(quantized.mean_probs),
                          static_cast<T>(weight));
  }
  out.loss = std::move(loss);
  out.codes = std::move(quantized.codes);
  for (const auto& p : quantized.mean_probs) {
    double h = 0;
    for (T v : p.data()) {
      if (v > T(0)) h -= double(v) * std::log(double(v));
    }
    out.perplexity.push_back(std::exp(h));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::layer_activations(const Waveform& wave) const {
  NoGradGuard guard;
  auto z = encoder_.encode(wave).values;
  auto ctx = context_.contextualize(z, {}, true);
  std::vector<Tensor<T>> out{z};
  for (auto& layer : ctx.per_layer) out.push_back(layer);
  return out;
}

template <typename T>
Tensor<T> Model<T>::pooled_features(const Waveform& wave) const {
  auto z = encoder_.encode(wave).values;
  return mean_over_axis(context_.contextualize(z, {}, false).values, 0);
}

template <typename T>
CodeIndices Model<T>::codes(const Waveform& wave) const {
  NoGradGuard guard;
  auto z = encoder_.encode(wave).values;
  return quantizer_.quantize(z, T(1), QuantizeMode::kEval, 0).codes;
}

HeadConfig HeadConfig::for_task(Task task) {
  return {task, task == Task::kPitch ? std::size_t{112} : std::size_t{11}};
}

std::string task_name(Task task) { return task == Task::kPitch ? "pitch" : "instrument"; }

Task parse_task(const std::string& name) {
  if (name == "pitch") return Task::kPitch;
  if (name == "instrument") return Task::kInstrument;
  throw std::invalid_argument("unknown task '" + name + "' (expected pitch|instrument)");
}

void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"task", task_name(c.task)}, {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, HeadConfig& c) {
  c.task = parse_task(j.at("task").get<std::string>());
  c.num_classes = j.at("num_classes").get<std::size_t>();
}

template <typename T>
Head<T>::Head(HeadConfig config, std::size_t feature_dim, Rng& rng) : config_(config) {
  if (config_.num_classes == 0) throw std::invalid_argument("head: num_classes must be positive");
  weight_ = normal_param<T>({feature_dim, config_.num_classes}, 0.01, rng);
  bias_ = constant_param<T>({config_.num_classes}, T(0));
}

template <typename T>
Tensor<T> Head<T>::logits(const Tensor<T>& features) const {
  auto x = features.rank() == 1 ? reshape(features, {1, features.size()}) : features;
  if (x.dim(1) != feature_dim()) throw ShapeError("head", "feature dim", feature_dim(), x.dim(1));
  return linear(x, weight_, bias_);
}

template <typename T>
ParamList<T> Head<T>::parameters() const {
  return {{"head.weight", weight_}, {"head.bias", bias_}};
}

template <typename T>
Head<T> Head<T>::clone() const {
  Head copy = *this;
  copy.weight_ = weight_.clone_leaf();
  copy.bias_ = bias_.clone_leaf();
  return copy;
}

template <typename T>
template <typename Source>
void Head<T>::load_values(const std::map<std::string, std::vector<Source>>& values) {
  for (auto* slot : {&weight_, &bias_}) {
    const std::string name = slot == &weight_ ? "head.weight" : "head.bias";
    auto it = values.find(name);
    if (it == values.end()) throw std::invalid_argument("missing parameter '" + name + "'");
    if (it->second.size() != slot->size()) {
      throw ShapeError("load_values", name, slot->size(), it->second.size());
    }
    auto dst = slot->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second[i]);
  }
}

template class Model<float>;
template class Model<double>;
template void Model<float>::load_values(const std::map<std::string, std::vector<float>>&);
template void Model<double>::load_values(const std::map<std::string, std::vector<float>>&);
template void Model<float>::load_values(const std::map<std::string, std::vector<double>>&);
template void Model<double>::load_values(const std::map<std::string, std::vector<double>>&);
template class Head<float>;
template class Head<double>;
template void Head<float>::load_values(const std::map<std::string, std::vector<float>>&);
template void Head<double>::load_values(const std::map<std::string, std::vector<float>>&);

}  // namespace muquant
