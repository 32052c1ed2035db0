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

// muquant/objective.hpp
//
// Span masking, in-utterance negative sampling and the cosine-similarity
// contrastive loss between context frames and quantized targets.

#ifndef MUQUANT_OBJECTIVE_HPP_
#define MUQUANT_OBJECTIVE_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "muquant/tensor.hpp"

namespace muquant {

struct MaskSpec {
  std::size_t frames = 0;
  double mask_prob = 0.065;
  std::size_t span = 10;
  std::vector<std::size_t> masked_indices;  // sorted, unique
};

/// Every frame t is a span start with probability p; a start is expanded to
/// the M frames [t, t + M), shifted left to [T - M, T) when it would run past
/// the last frame. Spans may overlap. A draw with no starts gets one span
/// placed uniformly in [0, T - M].
MaskSpec sample_mask(std::size_t frames, double mask_prob, std::size_t span,
                     std::uint64_t seed);

struct NegativeSet {
  std::size_t per_anchor = 0;                  // K
  std::vector<std::size_t> anchors;            // masked frames
  std::vector<std::size_t> negatives;          // [anchors x K]

  std::size_t at(std::size_t anchor, std::size_t k) const {
    return negatives[anchor * per_anchor + k];
  }
};

/// For every masked frame, K negatives drawn uniformly from the other masked
/// frames: without replacement when at least K are available, with
/// replacement otherwise.
NegativeSet sample_negatives(const MaskSpec& mask, std::size_t k, std::uint64_t seed);

template <typename T>
struct LossBreakdown {
  Tensor<T> contrastive;
  Tensor<T> diversity;  // undefined when the penalty is disabled
  Tensor<T> total;
  /// Fraction of anchors whose positive beats every negative.
  double accuracy = 0.0;

  double contrastive_value() const { return contrastive.item(); }
  double diversity_value() const { return diversity.defined() ? diversity.item() : 0.0; }
  double total_value() const { return total.item(); }
};

/// Mean over anchors t of -log softmax_j(cos(c_t, cand_j) / kappa)[0] where
/// cand_0 = q_t and the rest are q at the anchor's negatives.
template <typename T>
LossBreakdown<T> contrastive_loss(const Tensor<T>& context, const Tensor<T>& targets,
                                  const NegativeSet& negatives, T kappa);

/// contrastive + weight * diversity.
template <typename T>
LossBreakdown<T> combine_losses(LossBreakdown<T> contrastive, const Tensor<T>& diversity,
                                T weight);

}  // namespace muquant

#endif  // MUQUANT_OBJECTIVE_HPP_
