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

// muquant/encoder.hpp
//
// Convolutional feature encoder: raw waveform -> latent frames [T x d_z].

#ifndef MUQUANT_ENCODER_HPP_
#define MUQUANT_ENCODER_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/audio.hpp"
#include "muquant/params.hpp"
#include "muquant/random.hpp"
#include "muquant/tensor.hpp"

namespace muquant {

struct ConvLayerSpec {
  std::size_t filters = 512;
  std::size_t kernel_width = 3;
  std::size_t stride = 2;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct EncoderConfig {
  std::vector<ConvLayerSpec> layers;
  bool layer_norm = true;
  bool standardize_input = true;
  int sample_rate = kDefaultSampleRate;

  /// 7 layers x 512 filters, kernels (10,3,3,3,3,2,2), strides (5,2,2,2,2,2,2).
  static EncoderConfig paper();
  /// 3 layers x 64 filters, kernels (10,8,8), strides (5,8,8); same 320-sample hop.
  static EncoderConfig desk();

  std::size_t output_dim() const;
  std::size_t total_stride() const;
  /// Minimum input length that yields one frame.
  std::size_t receptive_field() const;
  std::size_t frames_for(std::size_t samples) const;
  double frame_hop_seconds() const;
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

template <typename T>
struct LatentFrames {
  Tensor<T> values;  // [T x d_z]
  double frame_hop_seconds = 0.0;

  std::size_t frames() const { return values.dim(0); }
};

/// Zero-mean, unit-variance copy of the samples (mean removal only when the
/// input is constant).
std::vector<double> standardize(std::span<const float> samples);

template <typename T>
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(EncoderConfig config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  /// Throws std::invalid_argument on a sample-rate mismatch or when the input
  /// is shorter than the receptive field.
  LatentFrames<T> encode(const Waveform& waveform) const;

  void collect(ParamRefs<T>& out, const std::string& prefix);

 private:
  struct Layer {
    Tensor<T> kernel;  // [filters x in x width]
    Tensor<T> bias;
    Tensor<T> gamma;
    Tensor<T> beta;
  };

  EncoderConfig config_;
  std::vector<Layer> layers_;
};

}  // namespace muquant

#endif  // MUQUANT_ENCODER_HPP_
