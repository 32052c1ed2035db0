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

#include "muquant/objective.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "muquant/ops.hpp"
#include "muquant/random.hpp"

namespace muquant {

MaskSpec sample_mask(std::size_t frames, double mask_prob, std::size_t span,
                     std::uint64_t seed) {
  if (span == 0) throw std::invalid_argument("sample_mask: span must be >= 1");
  if (frames < span) {
    throw std::invalid_argument("sample_mask: " + std::to_string(frames) +
                                " frames is shorter than the span length " +
                                std::to_string(span));
  }
  if (mask_prob < 0.0 || mask_prob > 1.0) {
    throw std::invalid_argument("sample_mask: mask_prob must be in [0, 1]");
  }
  Rng rng(seed);
  const std::size_t last_start = frames - span;
  std::vector<char> covered(frames, 0);
  bool any = false;
  for (std::size_t t = 0; t < frames; ++t) {
    if (rng.uniform() < mask_prob) {
      const std::size_t start = std::min(t, last_start);
      std::fill_n(covered.begin() + start, span, 1);
      any = true;
    }
  }
  if (!any) {
    const std::size_t start = rng.uniform_int(last_start + 1);
    std::fill_n(covered.begin() + start, span, 1);
  }
  MaskSpec mask;
  mask.frames = frames;
  mask.mask_prob = mask_prob;
  mask.span = span;
  for (std::size_t t = 0; t < frames; ++t) {
    if (covered[t]) mask.masked_indices.push_back(t);
  }
  return mask;
}

NegativeSet sample_negatives(const MaskSpec& mask, std::size_t k, std::uint64_t seed) {
  const auto& pool = mask.masked_indices;
  if (pool.size() < 2) {
    throw std::invalid_argument("sample_negatives: need at least 2 masked frames, got " +
                                std::to_string(pool.size()));
  }
  if (k == 0) throw std::invalid_argument("sample_negatives: K must be >= 1");
  Rng rng(seed);
  NegativeSet out;
  out.per_anchor = k;
  out.anchors = pool;
  out.negatives.reserve(pool.size() * k);
  const std::size_t others = pool.size() - 1;
  std::vector<std::size_t> scratch(others);
  for (std::size_t a = 0; a < pool.size(); ++a) {
    // Positions in `pool` excluding the anchor's own position a.
    auto other = [&](std::size_t j) { return pool[j < a ? j : j + 1]; };
    if (others >= k) {
      for (std::size_t j = 0; j < others; ++j) scratch[j] = j;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t pick = i + rng.uniform_int(others - i);
        std::swap(scratch[i], scratch[pick]);
        out.negatives.push_back(other(scratch[i]));
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) out.negatives.push_back(other(rng.uniform_int(others)));
    }
  }
  return out;
}

template <typename T>
LossBreakdown<T> contrastive_loss(const Tensor<T>& context, const Tensor<T>& targets,
                                  const NegativeSet& negatives, T kappa) {
  if (!(kappa > T(0))) throw std::invalid_argument("contrastive_loss: kappa must be > 0");
  if (context.rank() != 2 || targets.rank() != 2) {
    throw ShapeError("contrastive_loss", "rank", 2, context.rank());
  }
  if (context.dim(0) != targets.dim(0)) {
    throw ShapeError("contrastive_loss", "frames", context.dim(0), targets.dim(0));
  }
  if (context.dim(1) != targets.dim(1)) {
    throw ShapeError("contrastive_loss", "feature dim", context.dim(1), targets.dim(1));
  }
  const std::size_t anchors = negatives.anchors.size();
  const std::size_t k = negatives.per_anchor;
  if (anchors == 0) throw std::invalid_argument("contrastive_loss: no anchors");
  if (negatives.negatives.size() != anchors * k) {
    throw ShapeError("contrastive_loss", "negatives", anchors * k, negatives.negatives.size());
  }
  const std::size_t frames = context.dim(0);
  const std::size_t width = k + 1;
  std::vector<std::size_t> c_rows, q_rows;
  c_rows.reserve(anchors * width);
  q_rows.reserve(anchors * width);
  for (std::size_t a = 0; a < anchors; ++a) {
    const std::size_t t = negatives.anchors[a];
    if (t >= frames) throw ShapeError("contrastive_loss", "anchor index", frames - 1, t);
    c_rows.push_back(t);
    q_rows.push_back(t);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t n = negatives.at(a, j);
      if (n == t) throw std::invalid_argument("contrastive_loss: negative equals its anchor");
      if (n >= frames) throw ShapeError("contrastive_loss", "negative index", frames - 1, n);
      c_rows.push_back(t);
      q_rows.push_back(n);
    }
  }
  auto sims = cosine_rows(gather_rows(context, c_rows), gather_rows(targets, q_rows));
  auto logits = scale(reshape(sims, {anchors, width}), T(1) / kappa);
  const std::vector<std::size_t> labels(anchors, 0);
  LossBreakdown<T> out;
  out.contrastive = cross_entropy(logits, labels);
  out.total = out.contrastive;
  std::size_t correct = 0;
  const auto sd = sims.data();
  for (std::size_t a = 0; a < anchors; ++a) {
    const T pos = sd[a * width];
    bool best = true;
    for (std::size_t j = 1; j < width; ++j) best = best && pos > sd[a * width + j];
    correct += best ? 1 : 0;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(anchors);
  return out;
}

template <typename T>
LossBreakdown<T> combine_losses(LossBreakdown<T> contrastive, const Tensor<T>& diversity,
                                T weight) {
  contrastive.diversity = diversity;
  if (diversity.defined() && weight != T(0)) {
    contrastive.total = add(contrastive.contrastive, scale(diversity, weight));
  }
  return contrastive;
}

template LossBreakdown<float> contrastive_loss(const Tensor<float>&, const Tensor<float>&,
                                               const NegativeSet&, float);
template LossBreakdown<double> contrastive_loss(const Tensor<double>&, const Tensor<double>&,
                                                const NegativeSet&, double);
template LossBreakdown<float> combine_losses(LossBreakdown<float>, const Tensor<float>&, float);
template LossBreakdown<double> combine_losses(LossBreakdown<double>, const Tensor<double>&,
                                              double);

}  // namespace muquant
