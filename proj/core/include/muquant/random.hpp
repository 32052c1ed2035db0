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

// muquant/random.hpp
//
// Seeded random streams. Distributions are computed from raw mt19937_64 bits
// so draws do not depend on the standard library's distribution classes.

#ifndef MUQUANT_RANDOM_HPP_
#define MUQUANT_RANDOM_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace muquant {

/// Mixes a base seed with a list of stream coordinates (step, segment, ...).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  /// -log(-log(u)), u ~ U(0, 1).
  double gumbel();

  /// Serialized engine state (decimal words), for checkpoints.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace muquant

#endif  // MUQUANT_RANDOM_HPP_
