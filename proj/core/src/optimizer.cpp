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

#include "muquant/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace muquant {

void Adam::step(const ParamList<float>& params, const std::vector<std::vector<float>>& grads,
                const std::vector<double>& learning_rates) {
  if (grads.size() != params.size() || learning_rates.size() != params.size()) {
    throw std::invalid_argument("Adam::step: params, grads and rates differ in length");
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lr = learning_rates[i];
    if (lr == 0.0) continue;
    Tensor<float> tensor = params[i].tensor;
    auto values = tensor.mutable_data();
    const auto& g = grads[i];
    if (g.size() != values.size()) {
      throw std::invalid_argument("Adam::step: gradient size mismatch for " + params[i].name);
    }
    auto& mom = moments_[params[i].name];
    if (mom.m.empty()) {
      mom.m.assign(values.size(), 0.0f);
      mom.v.assign(values.size(), 0.0f);
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double m = b1 * mom.m[k] + (1.0 - b1) * g[k];
      const double v = b2 * mom.v[k] + (1.0 - b2) * double(g[k]) * g[k];
      mom.m[k] = static_cast<float>(m);
      mom.v[k] = static_cast<float>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + config_.eps);
      values[k] = static_cast<float>(values[k] - update);
    }
  }
}

}  // namespace muquant
