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

#include "muquant/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "muquant/ops.hpp"

namespace muquant {

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  const std::size_t kernels[] = {10, 3, 3, 3, 3, 2, 2};
  const std::size_t strides[] = {5, 2, 2, 2, 2, 2, 2};
  for (int i = 0; i < 7; ++i) c.layers.push_back({512, kernels[i], strides[i]});
  return c;
}

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c;
  c.layers = {{64, 10, 5}, {64, 8, 8}, {64, 8, 8}};
  return c;
}

std::size_t EncoderConfig::output_dim() const {
  return layers.empty() ? 1 : layers.back().filters;
}

std::size_t EncoderConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

std::size_t EncoderConfig::receptive_field() const {
  std::size_t r = 1;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    r = (r - 1) * it->stride + it->kernel_width;
  }
  return r;
}

std::size_t EncoderConfig::frames_for(std::size_t samples) const {
  std::size_t len = samples;
  for (const auto& l : layers) len = conv_output_length(len, l.kernel_width, l.stride);
  return len;
}

double EncoderConfig::frame_hop_seconds() const {
  return static_cast<double>(total_stride()) / sample_rate;
}

void EncoderConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("encoder: at least one conv layer required");
  for (const auto& l : layers) {
    if (l.filters == 0 || l.kernel_width == 0 || l.stride == 0) {
      throw std::invalid_argument("encoder: filters, kernel_width and stride must be positive");
    }
  }
  if (sample_rate <= 0) throw std::invalid_argument("encoder: sample_rate must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : c.layers) {
    layers.push_back({{"filters", l.filters}, {"kernel_width", l.kernel_width}, {"stride", l.stride}});
  }
  j = {{"layers", layers},
       {"layer_norm", c.layer_norm},
       {"standardize_input", c.standardize_input},
       {"sample_rate", c.sample_rate}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.layers.clear();
  for (const auto& l : j.at("layers")) {
    c.layers.push_back({l.at("filters").get<std::size_t>(),
                        l.at("kernel_width").get<std::size_t>(),
                        l.at("stride").get<std::size_t>()});
  }
  c.layer_norm = j.value("layer_norm", true);
  c.standardize_input = j.value("standardize_input", true);
  c.sample_rate = j.value("sample_rate", kDefaultSampleRate);
  c.validate();
}

std::vector<double> standardize(std::span<const float> samples) {
  std::vector<double> out(samples.begin(), samples.end());
  if (out.empty()) return out;
  double mu = 0;
  for (double v : out) mu += v;
  mu /= static_cast<double>(out.size());
  double var = 0;
  for (double v : out) var += (v - mu) * (v - mu);
  var /= static_cast<double>(out.size());
  const double inv = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
  for (double& v : out) v = (v - mu) * inv;
  return out;
}

template <typename T>
FeatureEncoder<T>::FeatureEncoder(EncoderConfig config, Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  std::size_t in = 1;
  for (const auto& spec : config_.layers) {
    Layer layer;
    const double fan_in = static_cast<double>(in * spec.kernel_width);
    layer.kernel = normal_param<T>({spec.filters, in, spec.kernel_width},
                                   std::sqrt(2.0 / fan_in), rng);
    layer.bias = constant_param<T>({spec.filters}, T(0));
    layer.gamma = constant_param<T>({spec.filters}, T(1));
    layer.beta = constant_param<T>({spec.filters}, T(0));
    layers_.push_back(std::move(layer));
    in = spec.filters;
  }
}

template <typename T>
LatentFrames<T> FeatureEncoder<T>::encode(const Waveform& waveform) const {
  if (waveform.sample_rate != config_.sample_rate) {
    throw std::invalid_argument(
        "encode: sample rate " + std::to_string(waveform.sample_rate) +
        " Hz does not match the encoder's " + std::to_string(config_.sample_rate) +
        " Hz (no resampling is performed)");
  }
  const std::size_t min_len = config_.receptive_field();
  if (waveform.samples.size() < min_len) {
    throw std::invalid_argument("encode: input has " +
                                std::to_string(waveform.samples.size()) +
                                " samples; minimum length is " +
                                std::to_string(min_len));
  }
  std::vector<T> input(waveform.samples.size());
  if (config_.standardize_input) {
    const auto z = standardize(waveform.samples);
    for (std::size_t i = 0; i < z.size(); ++i) input[i] = static_cast<T>(z[i]);
  } else {
    for (std::size_t i = 0; i < input.size(); ++i) input[i] = waveform.samples[i];
  }
  const std::size_t length = input.size();
  auto x = Tensor<T>::from({1, length}, std::move(input));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    const auto& spec = config_.layers[i];
    auto h = conv1d(x, layer.kernel, layer.bias, {spec.stride, 0, 1});
    h = transpose(h);  // [time x channels]
    if (config_.layer_norm) h = layer_norm(h, layer.gamma, layer.beta);
    h = gelu(h);
    x = (i + 1 < layers_.size()) ? transpose(h) : h;
  }
  return {x, config_.frame_hop_seconds()};
}

template <typename T>
void FeatureEncoder<T>::collect(ParamRefs<T>& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + "conv" + std::to_string(i) + ".";
    out.push_back({p + "kernel", &layers_[i].kernel});
    out.push_back({p + "bias", &layers_[i].bias});
    if (config_.layer_norm) {
      out.push_back({p + "norm.gamma", &layers_[i].gamma});
      out.push_back({p + "norm.beta", &layers_[i].beta});
    }
  }
}

template class FeatureEncoder<float>;
template class FeatureEncoder<double>;

}  // namespace muquant
