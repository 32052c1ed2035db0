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

// muquant/context.hpp
//
// Transformer context network over latent frames. Latents are layer-normed
// and projected to model_dim, masked frames are replaced by a learned
// embedding, a grouped convolution adds relative positional information, and
// a stack of pre-norm blocks with bidirectional attention follows.

#ifndef MUQUANT_CONTEXT_HPP_
#define MUQUANT_CONTEXT_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/params.hpp"
#include "muquant/random.hpp"
#include "muquant/tensor.hpp"

namespace muquant {

struct ContextConfig {
  std::size_t num_blocks = 12;
  std::size_t model_dim = 768;
  std::size_t heads = 12;
  std::size_t ffn_dim = 3072;
  bool positional = true;
  std::size_t pos_conv_kernel = 128;
  std::size_t pos_conv_groups = 16;

  static ContextConfig paper();
  static ContextConfig desk();
  void validate() const;

  bool operator==(const ContextConfig&) const = default;
};

void to_json(nlohmann::json& j, const ContextConfig& c);
void from_json(const nlohmann::json& j, ContextConfig& c);

template <typename T>
struct ContextFrames {
  Tensor<T> values;                  // [T x model_dim]
  std::vector<Tensor<T>> per_layer;  // one per block when retained
};

template <typename T>
class ContextNetwork {
 public:
  ContextNetwork() = default;
  ContextNetwork(ContextConfig config, std::size_t input_dim, Rng& rng);

  const ContextConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  const Tensor<T>& mask_embedding() const { return mask_embedding_; }

  /// Projection, masking and positional embedding: the input of block 0.
  Tensor<T> embed(const Tensor<T>& z, std::span<const std::size_t> masked) const;
  /// Applies blocks [first, last) to x.
  Tensor<T> run_blocks(const Tensor<T>& x, std::size_t first, std::size_t last) const;

  ContextFrames<T> contextualize(const Tensor<T>& z, std::span<const std::size_t> masked,
                                 bool retain_layers) const;

  void collect(ParamRefs<T>& out, const std::string& prefix);

 private:
  struct Block {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> qkv_weight, qkv_bias;  // [l x 3l]
    Tensor<T> out_weight, out_bias;  // [l x l]
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> ffn1_weight, ffn1_bias;
    Tensor<T> ffn2_weight, ffn2_bias;
  };

  Tensor<T> attention(const Block& block, const Tensor<T>& h) const;
  Tensor<T> block_forward(const Block& block, const Tensor<T>& x) const;

  ContextConfig config_;
  std::size_t input_dim_ = 0;
  Tensor<T> in_norm_gamma_, in_norm_beta_;
  Tensor<T> in_weight_, in_bias_;
  Tensor<T> mask_embedding_;
  Tensor<T> pos_kernel_, pos_bias_;
  std::vector<Block> blocks_;
};

}  // namespace muquant

#endif  // MUQUANT_CONTEXT_HPP_
