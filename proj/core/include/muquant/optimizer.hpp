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

// muquant/optimizer.hpp

#ifndef MUQUANT_OPTIMIZER_HPP_
#define MUQUANT_OPTIMIZER_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "muquant/params.hpp"

namespace muquant {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// Adam with per-parameter learning rates. Moments are keyed by parameter
/// name so state survives model cloning and checkpointing.
class Adam {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update. grads[i] belongs to params[i]; a learning rate of 0 leaves
  /// the parameter (and its moments) untouched.
  void step(const ParamList<float>& params, const std::vector<std::vector<float>>& grads,
            const std::vector<double>& learning_rates);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace muquant

#endif  // MUQUANT_OPTIMIZER_HPP_
