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

// muquant/ops.hpp
//
// Differentiable operations on Tensor<T>. Matrices are rank-2 row-major;
// "rows" means axis 0. Every op validates shapes and throws ShapeError on
// mismatch. Instantiated for float (training) and double (verification).

#ifndef MUQUANT_OPS_HPP_
#define MUQUANT_OPS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "muquant/tensor.hpp"

namespace muquant {

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;  // zeros on both ends
  std::size_t groups = 1;
};

/// floor((length + 2*padding - width) / stride) + 1. Throws when the padded
/// input is shorter than the kernel or stride is zero.
std::size_t conv_output_length(std::size_t length, std::size_t width,
                               std::size_t stride, std::size_t padding = 0);

/// input [C_in x L], kernel [C_out x C_in/groups x W], bias [C_out]
/// -> [C_out x out_length]. bias may be an undefined tensor.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Conv1dOptions options = {});

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a [m x k] times b [n x k] transposed.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// x [m x in] * weight [in x out] + bias [out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
/// Adds row [n] to every row of a [m x n].
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> gelu(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
template <typename T>
Tensor<T> log(const Tensor<T>& a);

/// Normalizes each row to zero mean / unit variance, then gamma * x + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));

/// Row-wise softmax of a matrix (a vector is treated as one row).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Mean over axis 0 or 1 of a matrix.
template <typename T>
Tensor<T> mean_over_axis(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);

/// Row-wise cosine similarity of two [m x n] matrices -> [m]. A zero-norm row
/// yields 0 with zero gradient and bumps zero_norm_events().
template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b);
/// Cosine similarity of two vectors -> scalar.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);

/// Number of zero-norm cosine evaluations on this thread since the last reset.
std::size_t zero_norm_events() noexcept;
void reset_zero_norm_events() noexcept;

/// Mean over rows of -log softmax(logits)[label]. logits [m x C] or [C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        std::span<const std::size_t> labels);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

/// Replaces the listed rows of x [T x D] with `row` [D].
template <typename T>
Tensor<T> replace_rows(const Tensor<T>& x, std::span<const std::size_t> rows,
                       const Tensor<T>& row);

/// Row-wise softmax((logits + noise) / tau). With `hard`, the forward value
/// is the one-hot argmax of each row (lowest index wins ties) while the
/// gradient is that of the soft relaxation.
template <typename T>
Tensor<T> gumbel_softmax_rows(const Tensor<T>& logits,
                              std::span<const T> noise, T tau, bool hard);

}  // namespace muquant

#endif  // MUQUANT_OPS_HPP_
