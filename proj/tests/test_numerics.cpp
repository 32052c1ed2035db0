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

#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradient_suite.hpp"
#include "muquant/kernels.hpp"
#include "muquant/ops.hpp"
#include "muquant/random.hpp"

using namespace muquant;
using muquant::testing::grad_check;
using muquant::testing::random_tensor;

TEST_CASE("conv output length") {
  CHECK(conv_output_length(10, 2, 2) == 5);
  CHECK(conv_output_length(16000, 10, 5) == 3199);
  CHECK(conv_output_length(3, 3, 1) == 1);
  CHECK_THROWS_AS(conv_output_length(2, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(conv_output_length(5, 2, 0), std::invalid_argument);
}

TEST_CASE("conv1d hand cases") {
  auto x = Tensor<double>::from({1, 3}, {1, 2, 3});
  auto k = Tensor<double>::from({1, 1, 2}, {1, 0});
  auto y = conv1d(x, k, Tensor<double>());
  REQUIRE(y.shape() == Shape{1, 2});
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == 2.0);

  // Identity kernel on two channels returns the input.
  Rng rng(3);
  auto in = random_tensor({2, 7}, rng);
  auto ident = Tensor<double>::from({2, 2, 1}, {1, 0, 0, 1});
  auto same = conv1d(in, ident, Tensor<double>());
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(same.at(i) == in.at(i));

  // Grouped conv with padding against a direct loop.
  auto big = random_tensor({4, 9}, rng);
  auto kern = random_tensor({6, 2, 3}, rng);
  auto bias = random_tensor({6}, rng);
  auto out = conv1d(big, kern, bias, {2, 1, 2});
  const std::size_t len = conv_output_length(9, 3, 2, 1);
  REQUIRE(out.shape() == Shape{6, len});
  for (std::size_t o = 0; o < 6; ++o) {
    const std::size_t g = o / 3;
    for (std::size_t t = 0; t < len; ++t) {
      double acc = bias.at(o);
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t w = 0; w < 3; ++w) {
          const long pos = static_cast<long>(t * 2 + w) - 1;
          if (pos < 0 || pos >= 9) continue;
          acc += kern.at((o * 2 + c) * 3 + w) * big.at(g * 2 + c, static_cast<std::size_t>(pos));
        }
      }
      CHECK(out.at(o, t) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(conv1d(big, random_tensor({6, 3, 3}, rng), bias, {1, 0, 2}), ShapeError);
}

TEST_CASE("blocked gemm matches naive triple loop") {
  Rng rng(11);
  const std::size_t m = 37, n = 300, k = 150;
  std::vector<double> a(m * k), b(k * n), c(m * n, 0.0);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  kernels::gemm_nn<double>(m, n, k, a.data(), b.data(), c.data(), false);
  double worst = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double ref = 0;
      for (std::size_t p = 0; p < k; ++p) ref += a[i * k + p] * b[p * n + j];
      worst = std::max(worst, std::abs(ref - c[i * n + j]));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("softmax, cosine, cross-entropy closed forms") {
  auto z = Tensor<double>::zeros({1, 5});
  auto s = softmax(z);
  for (std::size_t i = 0; i < 5; ++i) CHECK(s.at(i) == doctest::Approx(0.2).epsilon(1e-15));

  Rng rng(1);
  auto v = random_tensor({7}, rng);
  CHECK(cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(v, scale(v, -2.0)).item() == doctest::Approx(-1.0).epsilon(1e-12));

  auto logits = Tensor<double>::from({1, 2}, {10, -10});
  const std::vector<std::size_t> label = {0};
  const double expected = std::log1p(std::exp(-20.0));
  CHECK(std::abs(cross_entropy(logits, label).item() - expected) < 1e-15);
}

TEST_CASE("cosine of a zero vector is 0 with zero gradient and is counted") {
  reset_zero_norm_events();
  auto a = Tensor<double>::from({2, 3}, {0, 0, 0, 1, 2, 3}, true);
  auto b = Tensor<double>::from({2, 3}, {1, 1, 1, 1, 2, 3}, true);
  auto c = cosine_rows(a, b);
  CHECK(c.at(0) == 0.0);
  CHECK(zero_norm_events() == 1);
  backward(sum(c));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.grad()[i] == 0.0);
    CHECK(b.grad()[i] == 0.0);
  }
}

TEST_CASE("backward basics") {
  auto x = Tensor<double>::from({3}, {1, 2, 3}, true);
  auto s = sum(x);
  backward(s);
  CHECK(x.grad() == std::vector<double>{1, 1, 1});
  CHECK_THROWS_AS(backward(s), std::logic_error);
  reset_backward(s);
  backward(s);
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  auto y = Tensor<double>::from({2}, {1, 2}, true);
  backward(dot(y, y));
  CHECK(y.grad() == std::vector<double>{2, 4});
}

TEST_CASE("no-grad guard records no history") {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = mul(x, x);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("shape errors name the op and dimension") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.op() == "matmul");
    CHECK(e.expected() == 3);
    CHECK(e.actual() == 4);
  }
}

TEST_CASE("gelu uses the exact erf form") {
  auto x = Tensor<double>::from({3}, {-1.0, 0.0, 1.5});
  auto y = gelu(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = x.at(i);
    CHECK(y.at(i) == doctest::Approx(0.5 * v * (1 + std::erf(v / std::sqrt(2.0)))).epsilon(1e-14));
  }
}

TEST_CASE("layer norm output is standardized") {
  Rng rng(4);
  auto x = random_tensor({3, 8}, rng, 5.0);
  auto y = layer_norm(x, Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8}), 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 8;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("every op matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& c : muquant::testing::op_gradient_checks(seed)) {
      INFO(c.name << " seed " << seed << " err " << c.result.max_rel_error);
      CHECK(c.result.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("hard gumbel-softmax: one-hot forward, soft gradient") {
  Rng rng(2);
  auto a = random_tensor({3, 4}, rng);
  std::vector<double> noise(12, 0.0);
  auto hard = gumbel_softmax_rows<double>(a, noise, 0.5, true);
  auto soft = gumbel_softmax_rows<double>(a, noise, 0.5, false);
  for (std::size_t r = 0; r < 3; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c) {
      if (a.at(r, c) > a.at(r, best)) best = c;
    }
    for (std::size_t c = 0; c < 4; ++c) CHECK(hard.at(r, c) == (c == best ? 1.0 : 0.0));
  }
  auto w = random_tensor({3, 4}, rng);
  w.set_requires_grad(false);
  backward(sum(mul(hard, w)));
  const auto g_hard = a.grad();
  a.zero_grad();
  backward(sum(mul(soft, w)));
  const auto g_soft = a.grad();
  for (std::size_t i = 0; i < 12; ++i) CHECK(g_hard[i] == doctest::Approx(g_soft[i]).epsilon(1e-14));

  // Ties resolve to the lowest index.
  auto tied = Tensor<double>::from({1, 3}, {1, 1, 1});
  auto t = gumbel_softmax_rows<double>(tied, {}, 1.0, true);
  CHECK(t.at(0) == 1.0);
  CHECK(t.at(1) == 0.0);
  CHECK_THROWS_AS(gumbel_softmax_rows<double>(tied, {}, 0.0, true), std::invalid_argument);
}

TEST_CASE("rng is deterministic and derive_seed separates streams") {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  Rng c(9);
  (void)c.normal();
  const auto state = c.state();
  const double next = c.uniform();
  Rng d(0);
  d.set_state(state);
  CHECK(d.uniform() == next);
}
