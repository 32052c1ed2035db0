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

// Finite-difference checks for every differentiable op and for the complete
// pre-training loss. Shared by the unit tests and the acceptance binary.

#ifndef MUQUANT_TESTS_GRADIENT_SUITE_HPP_
#define MUQUANT_TESTS_GRADIENT_SUITE_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "muquant/model.hpp"
#include "muquant/ops.hpp"

namespace muquant::testing {

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

// Contracts x against fixed random weights so every output element receives
// a distinct upstream gradient.
inline Tensor<double> project(const Tensor<double>& x, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(x.size());
  for (auto& v : w) v = rng.normal();
  return sum(mul(x, Tensor<double>::from(x.shape(), std::move(w))));
}

/// A model small enough that every parameter can be perturbed.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.preset = "tiny";
  c.encoder.layers = {{8, 10, 5}, {8, 8, 8}};
  c.quantizer.groups = 2;
  c.quantizer.entries_per_group = 4;
  c.quantizer.entry_dim = 4;
  c.quantizer.output_dim = 16;
  c.context.num_blocks = 2;
  c.context.model_dim = 16;
  c.context.heads = 2;
  c.context.ffn_dim = 32;
  c.context.pos_conv_kernel = 4;
  c.context.pos_conv_groups = 2;
  return c;
}

inline Waveform test_tone(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(samples);
  const double f = 220.0 + 200.0 * rng.uniform();
  for (std::size_t i = 0; i < samples; ++i) {
    w.samples[i] = static_cast<float>(0.5 * std::sin(2 * M_PI * f * i / 16000.0) +
                                      0.05 * rng.normal());
  }
  return w;
}

inline std::vector<NamedCheck> op_gradient_checks(std::uint64_t seed) {
  std::vector<NamedCheck> out;
  Rng rng(derive_seed(seed, {7}));
  auto check = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                   std::function<Tensor<double>()> f) {
    out.push_back({name, grad_check(inputs, f, 0, seed)});
  };
  const auto ps = derive_seed(seed, {8});

  {
    auto x = random_tensor({4, 11}, rng), k = random_tensor({6, 2, 3}, rng),
         b = random_tensor({6}, rng);
    check("conv1d", {x, k, b},
          [=] { return project(conv1d(x, k, b, {2, 1, 2}), ps); });
  }
  {
    auto a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
    check("matmul", {a, b}, [=] { return project(matmul(a, b), ps); });
    auto c = random_tensor({4, 5}, rng);
    check("matmul_nt", {a, c}, [=] { return project(matmul_nt(a, c), ps); });
    auto bias = random_tensor({4}, rng);
    check("linear", {a, b, bias}, [=] { return project(linear(a, b, bias), ps); });
  }
  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng),
         r = random_tensor({4}, rng);
    check("add", {a, b}, [=] { return project(add(a, b), ps); });
    check("sub", {a, b}, [=] { return project(sub(a, b), ps); });
    check("mul", {a, b}, [=] { return project(mul(a, b), ps); });
    check("scale", {a}, [=] { return project(scale(a, 1.7), ps); });
    check("add_row", {a, r}, [=] { return project(add_row(a, r), ps); });
    check("transpose", {a}, [=] { return project(transpose(a), ps); });
    check("reshape", {a}, [=] { return project(reshape(a, {2, 6}), ps); });
    check("gelu", {a}, [=] { return project(gelu(a), ps); });
    check("exp", {a}, [=] { return project(exp(a), ps); });
    check("softmax", {a}, [=] { return project(softmax(a), ps); });
    check("mean_over_axis0", {a}, [=] { return project(mean_over_axis(a, 0), ps); });
    check("mean_over_axis1", {a}, [=] { return project(mean_over_axis(a, 1), ps); });
    check("sum", {a}, [=] { return scale(sum(mul(a, a)), 0.5); });
    check("mean", {a}, [=] { return mean(mul(a, b)); });
    check("cosine_rows", {a, b}, [=] { return project(cosine_rows(a, b), ps); });
    const std::vector<std::size_t> rows = {2, 0, 2};
    check("gather_rows", {a}, [=] { return project(gather_rows(a, rows), ps); });
    check("slice_rows", {a}, [=] { return project(slice_rows(a, 1, 2), ps); });
    check("slice_cols", {a}, [=] { return project(slice_cols(a, 1, 2), ps); });
    check("concat_cols", {a, b}, [=] { return project(concat_cols<double>({a, b, a}), ps); });
    const std::vector<std::size_t> masked = {0, 2};
    check("replace_rows", {a, r}, [=] { return project(replace_rows(a, masked, r), ps); });
  }
  {
    auto a = random_tensor({3, 4}, rng);
    std::vector<double> pos(12);
    for (auto& v : pos) v = 0.5 + rng.uniform();
    auto p = Tensor<double>::from({3, 4}, pos, true);
    check("log", {p}, [=] { return project(log(p), ps); });
    auto g = random_tensor({4}, rng), b = random_tensor({4}, rng);
    check("layer_norm", {a, g, b}, [=] { return project(layer_norm(a, g, b), ps); });
    auto u = random_tensor({6}, rng), v = random_tensor({6}, rng);
    check("dot", {u, v}, [=] { return dot(u, v); });
    check("cosine_similarity", {u, v}, [=] { return cosine_similarity(u, v); });
    const std::vector<std::size_t> labels = {1, 3, 0};
    check("cross_entropy", {a}, [=] { return cross_entropy(a, labels); });
    std::vector<double> noise(12);
    for (auto& n : noise) n = rng.gumbel();
    check("gumbel_softmax_soft", {a}, [=] {
      return project(gumbel_softmax_rows<double>(a, noise, 0.7, false), ps);
    });
  }
  return out;
}

/// Encoder, quantizer (relaxed), context network, contrastive loss and the
/// complete pre-training objective of a tiny model, all parameters perturbed.
inline std::vector<NamedCheck> model_gradient_checks(std::uint64_t seed,
                                                     std::size_t max_per_param = 0) {
  std::vector<NamedCheck> out;
  Model<double> model(tiny_model_config(), derive_seed(seed, {1}));
  const Waveform wave = test_tone(1600, derive_seed(seed, {2}));
  std::vector<Tensor<double>> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);

  ObjectiveSettings settings;
  settings.mask_prob = 0.2;
  settings.mask_span = 4;
  settings.num_negatives = 5;
  settings.quantize_mode = QuantizeMode::kSoft;
  const std::uint64_t fseed = derive_seed(seed, {3});
  out.push_back({"pretrain_loss", grad_check(params, [&] {
                   return model.pretrain_forward(wave, settings, 0.9, fseed).loss.total;
                 }, max_per_param, seed)});
  return out;
}

}  // namespace muquant::testing

#endif  // MUQUANT_TESTS_GRADIENT_SUITE_HPP_
