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

#include "muquant/context.hpp"

#include <cmath>
#include <stdexcept>

#include "muquant/ops.hpp"

namespace muquant {

ContextConfig ContextConfig::paper() { return ContextConfig{}; }

ContextConfig ContextConfig::desk() {
  ContextConfig c;
  c.num_blocks = 4;
  c.model_dim = 64;
  c.heads = 4;
  c.ffn_dim = 128;
  c.pos_conv_kernel = 8;
  c.pos_conv_groups = 4;
  return c;
}

void ContextConfig::validate() const {
  if (model_dim == 0 || heads == 0 || ffn_dim == 0) {
    throw std::invalid_argument("context: model_dim, heads, ffn_dim must be positive");
  }
  if (model_dim % heads) throw std::invalid_argument("context: model_dim must be divisible by heads");
  if (positional) {
    if (pos_conv_kernel == 0 || pos_conv_groups == 0 || model_dim % pos_conv_groups) {
      throw std::invalid_argument("context: model_dim must be divisible by pos_conv_groups");
    }
  }
}

void to_json(nlohmann::json& j, const ContextConfig& c) {
  j = {{"num_blocks", c.num_blocks},     {"model_dim", c.model_dim},
       {"heads", c.heads},               {"ffn_dim", c.ffn_dim},
       {"positional", c.positional},     {"pos_conv_kernel", c.pos_conv_kernel},
       {"pos_conv_groups", c.pos_conv_groups}};
}

void from_json(const nlohmann::json& j, ContextConfig& c) {
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.positional = j.value("positional", true);
  c.pos_conv_kernel = j.value("pos_conv_kernel", std::size_t{128});
  c.pos_conv_groups = j.value("pos_conv_groups", std::size_t{16});
  c.validate();
}

template <typename T>
ContextNetwork<T>::ContextNetwork(ContextConfig config, std::size_t input_dim, Rng& rng)
    : config_(std::move(config)), input_dim_(input_dim) {
  config_.validate();
  const std::size_t l = config_.model_dim;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(l));
  in_norm_gamma_ = constant_param<T>({input_dim}, T(1));
  in_norm_beta_ = constant_param<T>({input_dim}, T(0));
  in_weight_ = normal_param<T>({input_dim, l}, 1.0 / std::sqrt(double(input_dim)), rng);
  in_bias_ = constant_param<T>({l}, T(0));
  mask_embedding_ = normal_param<T>({l}, 1.0, rng);
  if (config_.positional) {
    const std::size_t per_group = l / config_.pos_conv_groups;
    const double fan_in = static_cast<double>(per_group * config_.pos_conv_kernel);
    pos_kernel_ = normal_param<T>({l, per_group, config_.pos_conv_kernel},
                                  1.0 / std::sqrt(fan_in), rng);
    pos_bias_ = constant_param<T>({l}, T(0));
  }
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    Block blk;
    blk.ln1_gamma = constant_param<T>({l}, T(1));
    blk.ln1_beta = constant_param<T>({l}, T(0));
    blk.qkv_weight = normal_param<T>({l, 3 * l}, proj_std, rng);
    blk.qkv_bias = constant_param<T>({3 * l}, T(0));
    blk.out_weight = normal_param<T>({l, l}, proj_std, rng);
    blk.out_bias = constant_param<T>({l}, T(0));
    blk.ln2_gamma = constant_param<T>({l}, T(1));
    blk.ln2_beta = constant_param<T>({l}, T(0));
    blk.ffn1_weight = normal_param<T>({l, config_.ffn_dim}, proj_std, rng);
    blk.ffn1_bias = constant_param<T>({config_.ffn_dim}, T(0));
    blk.ffn2_weight = normal_param<T>({config_.ffn_dim, l},
                                      1.0 / std::sqrt(double(config_.ffn_dim)), rng);
    blk.ffn2_bias = constant_param<T>({l}, T(0));
    blocks_.push_back(std::move(blk));
  }
}

template <typename T>
Tensor<T> ContextNetwork<T>::embed(const Tensor<T>& z,
                                   std::span<const std::size_t> masked) const {
  if (z.rank() != 2) throw ShapeError("contextualize", "rank", 2, z.rank());
  if (z.dim(0) == 0) throw std::invalid_argument("contextualize: no frames (T = 0)");
  if (z.dim(1) != input_dim_) throw ShapeError("contextualize", "latent dim", input_dim_, z.dim(1));
  auto x = linear(layer_norm(z, in_norm_gamma_, in_norm_beta_), in_weight_, in_bias_);
  if (!masked.empty()) x = replace_rows(x, masked, mask_embedding_);
  if (config_.positional) {
    const std::size_t frames = x.dim(0);
    const std::size_t k = config_.pos_conv_kernel;
    auto pos = conv1d(transpose(x), pos_kernel_, pos_bias_, {1, k / 2, config_.pos_conv_groups});
    if (pos.dim(1) != frames) pos = slice_cols(pos, 0, frames);  // even kernel: drop the extra step
    x = add(x, transpose(gelu(pos)));
  }
  return x;
}

template <typename T>
Tensor<T> ContextNetwork<T>::attention(const Block& block, const Tensor<T>& h) const {
  const std::size_t l = config_.model_dim;
  const std::size_t heads = config_.heads;
  const std::size_t dh = l / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  auto qkv = linear(h, block.qkv_weight, block.qkv_bias);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    auto q = slice_cols(qkv, i * dh, dh);
    auto k = slice_cols(qkv, l + i * dh, dh);
    auto v = slice_cols(qkv, 2 * l + i * dh, dh);
    auto weights = softmax(scale(matmul_nt(q, k), inv_sqrt));
    outputs.push_back(matmul(weights, v));
  }
  auto merged = heads == 1 ? outputs[0] : concat_cols(outputs);
  return linear(merged, block.out_weight, block.out_bias);
}

template <typename T>
Tensor<T> ContextNetwork<T>::block_forward(const Block& block, const Tensor<T>& x) const {
  auto h = add(x, attention(block, layer_norm(x, block.ln1_gamma, block.ln1_beta)));
  auto f = layer_norm(h, block.ln2_gamma, block.ln2_beta);
  f = linear(gelu(linear(f, block.ffn1_weight, block.ffn1_bias)), block.ffn2_weight,
             block.ffn2_bias);
  return add(h, f);
}

template <typename T>
Tensor<T> ContextNetwork<T>::run_blocks(const Tensor<T>& x, std::size_t first,
                                        std::size_t last) const {
  if (first > last || last > blocks_.size()) {
    throw std::out_of_range("run_blocks: invalid block range");
  }
  auto h = x;
  for (std::size_t b = first; b < last; ++b) h = block_forward(blocks_[b], h);
  return h;
}

template <typename T>
ContextFrames<T> ContextNetwork<T>::contextualize(const Tensor<T>& z,
                                                  std::span<const std::size_t> masked,
                                                  bool retain_layers) const {
  ContextFrames<T> out;
  auto h = embed(z, masked);
  for (const auto& block : blocks_) {
    h = block_forward(block, h);
    if (retain_layers) out.per_layer.push_back(h);
  }
  out.values = h;
  return out;
}

template <typename T>
void ContextNetwork<T>::collect(ParamRefs<T>& out, const std::string& prefix) {
  out.push_back({prefix + "in.norm.gamma", &in_norm_gamma_});
  out.push_back({prefix + "in.norm.beta", &in_norm_beta_});
  out.push_back({prefix + "in.weight", &in_weight_});
  out.push_back({prefix + "in.bias", &in_bias_});
  out.push_back({prefix + "mask_embedding", &mask_embedding_});
  if (config_.positional) {
    out.push_back({prefix + "pos_conv.kernel", &pos_kernel_});
    out.push_back({prefix + "pos_conv.bias", &pos_bias_});
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = prefix + "block" + std::to_string(b) + ".";
    auto& blk = blocks_[b];
    out.push_back({p + "ln1.gamma", &blk.ln1_gamma});
    out.push_back({p + "ln1.beta", &blk.ln1_beta});
    out.push_back({p + "attn.qkv.weight", &blk.qkv_weight});
    out.push_back({p + "attn.qkv.bias", &blk.qkv_bias});
    out.push_back({p + "attn.out.weight", &blk.out_weight});
    out.push_back({p + "attn.out.bias", &blk.out_bias});
    out.push_back({p + "ln2.gamma", &blk.ln2_gamma});
    out.push_back({p + "ln2.beta", &blk.ln2_beta});
    out.push_back({p + "ffn1.weight", &blk.ffn1_weight});
    out.push_back({p + "ffn1.bias", &blk.ffn1_bias});
    out.push_back({p + "ffn2.weight", &blk.ffn2_weight});
    out.push_back({p + "ffn2.bias", &blk.ffn2_bias});
  }
}

template class ContextNetwork<float>;
template class ContextNetwork<double>;

}  // namespace muquant
