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

// muquant/quantizer.hpp
//
// Product quantization of latent frames with Gumbel-Softmax entry selection.
// Each of G codebooks holds V entries; one entry per group is selected, the
// selections are concatenated and linearly mapped to the target vectors Q.

#ifndef MUQUANT_QUANTIZER_HPP_
#define MUQUANT_QUANTIZER_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/encoder.hpp"
#include "muquant/params.hpp"
#include "muquant/random.hpp"
#include "muquant/tensor.hpp"

namespace muquant {

struct QuantizerConfig {
  std::size_t groups = 2;
  std::size_t entries_per_group = 320;
  std::size_t entry_dim = 384;
  std::size_t output_dim = 768;

  // Temperature is annealed multiplicatively per optimizer step and clamped
  // at tau_end.
  double tau_start = 2.0;
  double tau_end = 0.5;
  double tau_decay = 0.9995;

  /// 0 disables the codebook-usage penalty.
  double diversity_weight = 0.1;

  static QuantizerConfig paper();
  static QuantizerConfig desk();

  double temperature_at(std::uint64_t step) const;
  void validate() const;

  bool operator==(const QuantizerConfig&) const = default;
};

void to_json(nlohmann::json& j, const QuantizerConfig& c);
void from_json(const nlohmann::json& j, QuantizerConfig& c);

enum class QuantizeMode {
  kTrain,  // Gumbel noise, hard one-hot forward, soft gradient
  kEval,   // argmax of the logits, no noise
  kSoft,   // Gumbel noise, relaxed forward (fully differentiable)
};

/// Joint code id for G = 2: first * V + second.
struct CodeIndices {
  std::size_t groups = 0;
  std::size_t entries_per_group = 0;
  std::vector<std::uint32_t> indices;  // [frames x groups]

  std::size_t frames() const { return groups ? indices.size() / groups : 0; }
  std::uint32_t at(std::size_t frame, std::size_t group) const {
    return indices[frame * groups + group];
  }
  /// Mixed-radix combination of all groups' indices, in [0, V^G).
  std::uint64_t joint(std::size_t frame) const;
};

template <typename T>
struct QuantizedFrames {
  Tensor<T> values;  // [T x output_dim]
  CodeIndices codes;
  /// Per group, the frame-averaged softmax of the selection logits ([V]).
  std::vector<Tensor<T>> mean_probs;
};

template <typename T>
struct Codebook {
  std::size_t groups = 0;
  std::size_t entries_per_group = 0;
  std::size_t entry_dim = 0;
  Tensor<T> entries;  // [G x V x entry_dim]
};

/// softmax((logits + g) / tau) for a vector of logits, g_i = -log(-log u_i)
/// drawn from `rng`. A null rng gives the noise-free softmax(logits / tau).
template <typename T>
Tensor<T> gumbel_softmax(const Tensor<T>& logits, T tau, Rng* rng);

/// exp(entropy(mean probabilities)) per group. `probs` is row-major
/// [frames x groups x entries].
std::vector<double> codebook_perplexity(std::span<const double> probs, std::size_t frames,
                                        std::size_t groups, std::size_t entries);

template <typename T>
class Quantizer {
 public:
  Quantizer() = default;
  Quantizer(QuantizerConfig config, std::size_t input_dim, Rng& rng);

  const QuantizerConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  Codebook<T> codebook() const;

  /// Selection logits [T x G*V] for latent frames [T x input_dim].
  Tensor<T> logits(const Tensor<T>& z) const;

  QuantizedFrames<T> quantize(const Tensor<T>& z, T tau, QuantizeMode mode,
                              std::uint64_t seed) const;

  void collect(ParamRefs<T>& out, const std::string& prefix);

 private:
  QuantizerConfig config_;
  std::size_t input_dim_ = 0;
  Tensor<T> logit_weight_;  // [input_dim x G*V]
  Tensor<T> logit_bias_;
  Tensor<T> entries_;       // [G x V x entry_dim]
  Tensor<T> out_weight_;    // [G*entry_dim x output_dim]
  Tensor<T> out_bias_;
};

/// (G*V - sum_g perplexity_g) / (G*V), computed from mean_probs; 0 when every
/// entry is used uniformly.
template <typename T>
Tensor<T> diversity_penalty(const std::vector<Tensor<T>>& mean_probs);

}  // namespace muquant

#endif  // MUQUANT_QUANTIZER_HPP_
