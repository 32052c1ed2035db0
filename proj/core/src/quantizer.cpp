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

#include "muquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "muquant/ops.hpp"

namespace muquant {

QuantizerConfig QuantizerConfig::paper() { return QuantizerConfig{}; }

QuantizerConfig QuantizerConfig::desk() {
  QuantizerConfig c;
  c.entries_per_group = 16;
  c.entry_dim = 32;
  c.output_dim = 64;
  return c;
}

double QuantizerConfig::temperature_at(std::uint64_t step) const {
  const double t = tau_start * std::pow(tau_decay, static_cast<double>(step));
  return std::max(t, tau_end);
}

void QuantizerConfig::validate() const {
  if (groups == 0 || entries_per_group == 0 || entry_dim == 0 || output_dim == 0) {
    throw std::invalid_argument("quantizer: groups, entries, dims must be positive");
  }
  if (!(tau_start > 0) || !(tau_end > 0) || !(tau_decay > 0) || tau_decay > 1) {
    throw std::invalid_argument("quantizer: temperatures must be > 0 and decay in (0, 1]");
  }
  if (diversity_weight < 0) throw std::invalid_argument("quantizer: diversity_weight < 0");
}

void to_json(nlohmann::json& j, const QuantizerConfig& c) {
  j = {{"groups", c.groups},
       {"entries_per_group", c.entries_per_group},
       {"entry_dim", c.entry_dim},
       {"output_dim", c.output_dim},
       {"tau_start", c.tau_start},
       {"tau_end", c.tau_end},
       {"tau_decay", c.tau_decay},
       {"diversity_weight", c.diversity_weight}};
}

void from_json(const nlohmann::json& j, QuantizerConfig& c) {
  c.groups = j.at("groups").get<std::size_t>();
  c.entries_per_group = j.at("entries_per_group").get<std::size_t>();
  c.entry_dim = j.at("entry_dim").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.tau_start = j.value("tau_start", 2.0);
  c.tau_end = j.value("tau_end", 0.5);
  c.tau_decay = j.value("tau_decay", 0.9995);
  c.diversity_weight = j.value("diversity_weight", 0.1);
  c.validate();
}

std::uint64_t CodeIndices::joint(std::size_t frame) const {
  std::uint64_t id = 0;
  for (std::size_t g = 0; g < groups; ++g) id = id * entries_per_group + at(frame, g);
  return id;
}

template <typename T>
Tensor<T> gumbel_softmax(const Tensor<T>& logits, T tau, Rng* rng) {
  if (!(tau > T(0))) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  if (logits.rank() != 1) throw ShapeError("gumbel_softmax", "rank", 1, logits.rank());
  std::vector<T> noise;
  if (rng) {
    noise.resize(logits.size());
    for (auto& g : noise) g = static_cast<T>(rng->gumbel());
  }
  auto row = reshape(logits, {1, logits.size()});
  return reshape(gumbel_softmax_rows(row, std::span<const T>(noise), tau, false),
                 {logits.size()});
}

std::vector<double> codebook_perplexity(std::span<const double> probs, std::size_t frames,
                                        std::size_t groups, std::size_t entries) {
  if (frames == 0) throw std::invalid_argument("codebook_perplexity: empty batch");
  if (probs.size() != frames * groups * entries) {
    throw ShapeError("codebook_perplexity", "probs", frames * groups * entries, probs.size());
  }
  std::vector<double> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> avg(entries, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t v = 0; v < entries; ++v) avg[v] += probs[(t * groups + g) * entries + v];
    }
    double h = 0;
    for (double& p : avg) {
      p /= static_cast<double>(frames);
      if (p > 0) h -= p * std::log(p);
    }
    out[g] = std::exp(h);
  }
  return out;
}

template <typename T>
Quantizer<T>::Quantizer(QuantizerConfig config, std::size_t input_dim, Rng& rng)
    : config_(std::move(config)), input_dim_(input_dim) {
  config_.validate();
  const std::size_t gv = config_.groups * config_.entries_per_group;
  // Unit-variance selection weights keep the logits well above the Gumbel
  // noise scale from the first step, so code choice depends on the input.
  logit_weight_ = normal_param<T>({input_dim, gv}, 1.0, rng);
  logit_bias_ = constant_param<T>({gv}, T(0));
  entries_ = normal_param<T>({config_.groups, config_.entries_per_group, config_.entry_dim},
                             1.0, rng);
  const std::size_t cat = config_.groups * config_.entry_dim;
  out_weight_ = normal_param<T>({cat, config_.output_dim}, 1.0 / std::sqrt(double(cat)), rng);
  out_bias_ = constant_param<T>({config_.output_dim}, T(0));
}

template <typename T>
Codebook<T> Quantizer<T>::codebook() const {
  return {config_.groups, config_.entries_per_group, config_.entry_dim, entries_};
}

template <typename T>
Tensor<T> Quantizer<T>::logits(const Tensor<T>& z) const {
  if (z.rank() != 2) throw ShapeError("quantize", "rank", 2, z.rank());
  if (z.dim(1) != input_dim_) throw ShapeError("quantize", "latent dim", input_dim_, z.dim(1));
  return linear(z, logit_weight_, logit_bias_);
}

template <typename T>
QuantizedFrames<T> Quantizer<T>::quantize(const Tensor<T>& z, T tau, QuantizeMode mode,
                                          std::uint64_t seed) const {
  const std::size_t groups = config_.groups;
  const std::size_t v = config_.entries_per_group;
  const std::size_t frames = z.dim(0);
  auto all_logits = logits(z);
  auto flat_entries = reshape(entries_, {groups * v, config_.entry_dim});

  Rng rng(seed);
  QuantizedFrames<T> out;
  out.codes.groups = groups;
  out.codes.entries_per_group = v;
  out.codes.indices.assign(frames * groups, 0);
  std::vector<Tensor<T>> selected;
  for (std::size_t g = 0; g < groups; ++g) {
    auto group_logits = slice_cols(all_logits, g * v, v);
    std::vector<T> noise;
    if (mode != QuantizeMode::kEval) {
      noise.resize(frames * v);
      for (auto& n : noise) n = static_cast<T>(rng.gumbel());
    }
    const bool hard = mode != QuantizeMode::kSoft;
    auto choice = gumbel_softmax_rows(group_logits, std::span<const T>(noise), tau, hard);
    const auto cd = choice.data();
    for (std::size_t t = 0; t < frames; ++t) {
      const auto* row = cd.data() + t * v;
      out.codes.indices[t * groups + g] =
          static_cast<std::uint32_t>(std::max_element(row, row + v) - row);
    }
    selected.push_back(matmul(choice, slice_rows(flat_entries, g * v, v)));
    out.mean_probs.push_back(mean_over_axis(softmax(group_logits), 0));
  }
  out.values = linear(concat_cols(selected), out_weight_, out_bias_);
  return out;
}

template <typename T>
void Quantizer<T>::collect(ParamRefs<T>& out, const std::string& prefix) {
  out.push_back({prefix + "logits.weight", &logit_weight_});
  out.push_back({prefix + "logits.bias", &logit_bias_});
  out.push_back({prefix + "codebook", &entries_});
  out.push_back({prefix + "out.weight", &out_weight_});
  out.push_back({prefix + "out.bias", &out_bias_});
}

template <typename T>
Tensor<T> diversity_penalty(const std::vector<Tensor<T>>& mean_probs) {
  if (mean_probs.empty()) throw std::invalid_argument("diversity_penalty: no groups");
  std::size_t total_entries = 0;
  Tensor<T> perplexity_sum;
  for (const auto& p : mean_probs) {
    total_entries += p.size();
    auto eps = Tensor<T>::full(p.shape(), T(1e-7));
    auto entropy = scale(sum(mul(p, log(add(p, eps)))), T(-1));
    auto perplexity = exp(entropy);
    perplexity_sum = perplexity_sum.defined() ? add(perplexity_sum, perplexity) : perplexity;
  }
  const T n = static_cast<T>(total_entries);
  // (n - sum) / n == 1 - sum / n
  auto one = Tensor<T>::scalar(T(1));
  return sub(one, scale(perplexity_sum, T(1) / n));
}

template class Quantizer<float>;
template class Quantizer<double>;
template Tensor<float> gumbel_softmax(const Tensor<float>&, float, Rng*);
template Tensor<double> gumbel_softmax(const Tensor<double>&, double, Rng*);
template Tensor<float> diversity_penalty(const std::vector<Tensor<float>>&);
template Tensor<double> diversity_penalty(const std::vector<Tensor<double>>&);

}  // namespace muquant
