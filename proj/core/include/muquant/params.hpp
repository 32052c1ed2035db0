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

// muquant/params.hpp
//
// Named parameter handles and initializers shared by the network modules.

#ifndef MUQUANT_PARAMS_HPP_
#define MUQUANT_PARAMS_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "muquant/random.hpp"
#include "muquant/tensor.hpp"

namespace muquant {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Mutable references into a module's parameter slots, in registration order.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* slot;
};

template <typename T>
using ParamRefs = std::vector<ParamRef<T>>;

template <typename T>
Tensor<T> normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(stddev * rng.normal());
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

/// Fresh leaves with the same values; the result carries no gradient history.
template <typename T>
ParamList<T> clone_params(const ParamList<T>& params) {
  ParamList<T> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone_leaf()});
  return out;
}

}  // namespace muquant

#endif  // MUQUANT_PARAMS_HPP_
