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

#include "muquant/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "muquant/kernels.hpp"

namespace muquant {

namespace {

thread_local std::size_t g_zero_norm_events = 0;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

void require_rank(const char* op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) throw ShapeError(op, "rank", rank, shape.size());
}

void require_dim(const char* op, const char* name, std::size_t expected,
                 std::size_t actual) {
  if (expected != actual) throw ShapeError(op, name, expected, actual);
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  require_dim(op, "rank", a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw ShapeError(op, "axis " + std::to_string(i), a[i], b[i]);
    }
  }
}

// Views a rank-1 or rank-2 shape as (rows, cols).
std::pair<std::size_t, std::size_t> as_matrix(const char* op,
                                              const Shape& shape) {
  if (shape.size() == 1) return {1, shape[0]};
  if (shape.size() == 2) return {shape[0], shape[1]};
  throw ShapeError(op, "rank", 2, shape.size());
}

template <typename T>
void accumulate(Node<T>& target, const std::vector<T>& delta) {
  auto& g = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> /
                std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace

std::size_t zero_norm_events() noexcept { return g_zero_norm_events; }
void reset_zero_norm_events() noexcept { g_zero_norm_events = 0; }

std::size_t conv_output_length(std::size_t length, std::size_t width,
                               std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv1d", "stride", 1, 0);
  if (width == 0) throw ShapeError("conv1d", "width", 1, 0);
  const std::size_t padded = length + 2 * padding;
  if (padded < width) throw ShapeError("conv1d", "length", width, padded);
  return (padded - width) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv1d

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Conv1dOptions options) {
  constexpr const char* kOp = "conv1d";
  require_rank(kOp, input.shape(), 2);
  require_rank(kOp, kernel.shape(), 3);
  const std::size_t groups = options.groups;
  if (groups == 0) throw ShapeError(kOp, "groups", 1, 0);
  const std::size_t c_in = input.dim(0);
  const std::size_t length = input.dim(1);
  const std::size_t c_out = kernel.dim(0);
  const std::size_t width = kernel.dim(2);
  if (c_in % groups) throw ShapeError(kOp, "channels_in % groups", 0, c_in % groups);
  if (c_out % groups) throw ShapeError(kOp, "channels_out % groups", 0, c_out % groups);
  const std::size_t gin = c_in / groups;
  const std::size_t gout = c_out / groups;
  require_dim(kOp, "kernel channels_in", gin, kernel.dim(1));
  if (bias.defined()) {
    require_rank(kOp, bias.shape(), 1);
    require_dim(kOp, "bias channels_out", c_out, bias.dim(0));
  }
  const std::size_t stride = options.stride;
  const std::size_t pad = options.padding;
  const std::size_t out_len = conv_output_length(length, width, stride, pad);
  const std::size_t patch = gin * width;

  // cols[g] is [patch x out_len]: cols[(i, w), t] = x[g*gin + i, t*stride + w - pad]
  std::vector<T> cols(groups * patch * out_len, T(0));
  const auto x = input.data();
  for (std::size_t g = 0; g < groups; ++g) {
    T* gcols = cols.data() + g * patch * out_len;
    for (std::size_t i = 0; i < gin; ++i) {
      const T* xrow = x.data() + (g * gin + i) * length;
      for (std::size_t w = 0; w < width; ++w) {
        T* crow = gcols + (i * width + w) * out_len;
        for (std::size_t t = 0; t < out_len; ++t) {
          const std::size_t pos = t * stride + w;
          if (pos >= pad && pos - pad < length) crow[t] = xrow[pos - pad];
        }
      }
    }
  }

  std::vector<T> out(c_out * out_len);
  const auto k = kernel.data();
  for (std::size_t g = 0; g < groups; ++g) {
    kernels::gemm_nn(gout, out_len, patch, k.data() + g * gout * patch,
                     cols.data() + g * patch * out_len,
                     out.data() + g * gout * out_len, false);
  }
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t o = 0; o < c_out; ++o) {
      T* row = out.data() + o * out_len;
      for (std::size_t t = 0; t < out_len; ++t) row[t] += b[o];
    }
  }

  std::vector<NodePtr<T>> parents{input.node(), kernel.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return detail::make_result<T>(
      kOp, {c_out, out_len}, std::move(out), std::move(parents),
      [cols = std::move(cols), groups, gin, gout, c_in, length, width, stride,
       pad, out_len, patch](Node<T>& self) {
        const auto& dy = self.grad;
        Node<T>& in = *self.parents[0];
        Node<T>& ker = *self.parents[1];
        if (ker.requires_grad) {
          auto& dk = ker.ensure_grad();
          for (std::size_t g = 0; g < groups; ++g) {
            kernels::gemm_nt(gout, patch, out_len, dy.data() + g * gout * out_len,
                             cols.data() + g * patch * out_len,
                             dk.data() + g * gout * patch, true);
          }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& db = self.parents[2]->ensure_grad();
          for (std::size_t o = 0; o < gout * groups; ++o) {
            const T* row = dy.data() + o * out_len;
            T acc = 0;
            for (std::size_t t = 0; t < out_len; ++t) acc += row[t];
            db[o] += acc;
          }
        }
        if (in.requires_grad) {
          std::vector<T> dcols(patch * out_len);
          auto& dx = in.ensure_grad();
          for (std::size_t g = 0; g < groups; ++g) {
            kernels::gemm_tn(patch, out_len, gout, ker.data.data() + g * gout * patch,
                             dy.data() + g * gout * out_len, dcols.data(), false);
            for (std::size_t i = 0; i < gin; ++i) {
              T* dxrow = dx.data() + (g * gin + i) * length;
              for (std::size_t w = 0; w < width; ++w) {
                const T* drow = dcols.data() + (i * width + w) * out_len;
                for (std::size_t t = 0; t < out_len; ++t) {
                  const std::size_t pos = t * stride + w;
                  if (pos >= pad && pos - pad < length) dxrow[pos - pad] += drow[t];
                }
              }
            }
          }
        }
        (void)c_in;
      });
}

// ---------------------------------------------------------------------------
// matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  constexpr const char* kOp = "matmul";
  require_rank(kOp, a.shape(), 2);
  require_rank(kOp, b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require_dim(kOp, "inner", k, b.dim(0));
  std::vector<T> out(m * n);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return detail::make_result<T>(
      kOp, {m, n}, std::move(out), {a.node(), b.node()},
      [m, n, k](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
          kernels::gemm_nt(m, k, n, self.grad.data(), pb.data.data(),
                           pa.ensure_grad().data(), true);
        }
        if (pb.requires_grad) {
          kernels::gemm_tn(k, n, m, pa.data.data(), self.grad.data(),
                           pb.ensure_grad().data(), true);
        }
      });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  constexpr const char* kOp = "matmul_nt";
  require_rank(kOp, a.shape(), 2);
  require_rank(kOp, b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  require_dim(kOp, "inner", k, b.dim(1));
  std::vector<T> out(m * n);
  kernels::gemm_nt(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return detail::make_result<T>(
      kOp, {m, n}, std::move(out), {a.node(), b.node()},
      [m, n, k](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
          kernels::gemm_nn(m, k, n, self.grad.data(), pb.data.data(),
                           pa.ensure_grad().data(), true);
        }
        if (pb.requires_grad) {
          kernels::gemm_tn(n, k, m, self.grad.data(), pa.data.data(),
                           pb.ensure_grad().data(), true);
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return detail::make_result<T>("add", a.shape(), std::move(out),
                                {a.node(), b.node()}, [](Node<T>& self) {
                                  for (auto& p : self.parents) {
                                    if (p->requires_grad) accumulate(*p, self.grad);
                                  }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return detail::make_result<T>(
      "sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
          auto& g = self.parents[1]->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return detail::make_result<T>(
      "mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return detail::make_result<T>(
      "scale", a.shape(), std::move(out), {a.node()}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
      });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  constexpr const char* kOp = "add_row";
  require_rank(kOp, a.shape(), 2);
  require_rank(kOp, row.shape(), 1);
  const std::size_t m = a.dim(0), n = a.dim(1);
  require_dim(kOp, "columns", n, row.dim(0));
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  }
  return detail::make_result<T>(
      kOp, a.shape(), std::move(out), {a.node(), row.node()},
      [m, n](Node<T>& self) {
        if (self.parents[0]->requires_grad) accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
          auto& g = self.parents[1]->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
          }
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  kernels::transpose(m, n, a.data().data(), out.data());
  return detail::make_result<T>(
      "transpose", {n, m}, std::move(out), {a.node()}, [m, n](Node<T>& self) {
        std::vector<T> back(m * n);
        kernels::transpose(n, m, self.grad.data(), back.data());
        accumulate(*self.parents[0], back);
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require_dim("reshape", "numel", a.size(), numel(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_result<T>(
      "reshape", std::move(shape), std::move(out), {a.node()},
      [](Node<T>& self) { accumulate(*self.parents[0], self.grad); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a.at(i));
  return detail::make_result<T>(
      "gelu", a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i] * gelu_derivative(p.data[i]);
        }
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
  return detail::make_result<T>(
      "exp", a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.at(i));
  return detail::make_result<T>(
      "log", a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p.data[i];
      });
}

// ---------------------------------------------------------------------------
// normalization / reductions

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  constexpr const char* kOp = "layer_norm";
  const auto [m, n] = as_matrix(kOp, x.shape());
  require_rank(kOp, gamma.shape(), 1);
  require_rank(kOp, beta.shape(), 1);
  require_dim(kOp, "gamma features", n, gamma.dim(0));
  require_dim(kOp, "beta features", n, beta.dim(0));
  std::vector<T> xhat(m * n), inv_std(m), out(m * n);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xd.data() + i * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * gd[j] + bd[j];
    }
  }
  return detail::make_result<T>(
      kOp, x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), m = m,
       n = n](Node<T>& self) {
        const auto& dy = self.grad;
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          std::vector<T> dh(n);
          for (std::size_t i = 0; i < m; ++i) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = dy[i * n + j] * pg.data[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[i * n + j];
            }
            mean_dh /= T(n);
            mean_dh_h /= T(n);
            for (std::size_t j = 0; j < n; ++j) {
              g[i * n + j] += inv_std[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const auto [m, n] = as_matrix("softmax", x.shape());
  std::vector<T> out(m * n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xd.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return detail::make_result<T>(
      "softmax", x.shape(), std::move(out), {x.node()}, [m = m, n = n](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          T s = 0;
          for (std::size_t j = 0; j < n; ++j) s += self.grad[i * n + j] * self.data[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            g[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - s);
          }
        }
      });
}

template <typename T>
Tensor<T> mean_over_axis(const Tensor<T>& x, std::size_t axis) {
  constexpr const char* kOp = "mean_over_axis";
  require_rank(kOp, x.shape(), 2);
  if (axis > 1) throw ShapeError(kOp, "axis", 1, axis);
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xd = x.data();
  if (axis == 0) {
    // Accumulate in double so the pooled mean does not drift with length.
    std::vector<double> acc(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) acc[j] += static_cast<double>(xd[i * n + j]);
    std::vector<T> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<T>(acc[j] / static_cast<double>(m));
    return detail::make_result<T>(kOp, {n}, std::move(out), {x.node()},
                                  [m, n](Node<T>& self) {
                                    auto& g = self.parents[0]->ensure_grad();
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j)
                                        g[i * n + j] += self.grad[j] / T(m);
                                  });
  }
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i] += xd[i * n + j];
    out[i] /= T(n);
  }
  return detail::make_result<T>(kOp, {m}, std::move(out), {x.node()},
                                [m, n](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < m; ++i)
                                    for (std::size_t j = 0; j < n; ++j)
                                      g[i * n + j] += self.grad[i] / T(n);
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return detail::make_result<T>("sum", {}, {total}, {x.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  return sum(mul(a, b));
}

template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  constexpr const char* kOp = "cosine_rows";
  require_same_shape(kOp, a.shape(), b.shape());
  const auto [m, n] = as_matrix(kOp, a.shape());
  std::vector<T> out(m), na(m), nb(m);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    T ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < n; ++j) {
      ab += ad[i * n + j] * bd[i * n + j];
      aa += ad[i * n + j] * ad[i * n + j];
      bb += bd[i * n + j] * bd[i * n + j];
    }
    na[i] = std::sqrt(aa);
    nb[i] = std::sqrt(bb);
    if (na[i] == T(0) || nb[i] == T(0)) {
      ++g_zero_norm_events;
      out[i] = 0;
    } else {
      out[i] = std::clamp(ab / (na[i] * nb[i]), T(-1), T(1));
    }
  }
  return detail::make_result<T>(
      kOp, {m}, std::move(out), {a.node(), b.node()},
      [na = std::move(na), nb = std::move(nb), m = m, n = n](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        for (std::size_t i = 0; i < m; ++i) {
          if (na[i] == T(0) || nb[i] == T(0)) continue;
          const T c = self.data[i];
          const T dy = self.grad[i];
          const T inv = T(1) / (na[i] * nb[i]);
          if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            const T ka = c / (na[i] * na[i]);
            for (std::size_t j = 0; j < n; ++j) {
              g[i * n + j] += dy * (pb.data[i * n + j] * inv - pa.data[i * n + j] * ka);
            }
          }
          if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            const T kb = c / (nb[i] * nb[i]);
            for (std::size_t j = 0; j < n; ++j) {
              g[i * n + j] += dy * (pa.data[i * n + j] * inv - pb.data[i * n + j] * kb);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("cosine_similarity", a.shape(), 1);
  auto r = cosine_rows(reshape(a, {1, a.size()}), reshape(b, {1, b.size()}));
  return reshape(r, {});
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        std::span<const std::size_t> labels) {
  constexpr const char* kOp = "cross_entropy";
  const auto [m, n] = as_matrix(kOp, logits.shape());
  require_dim(kOp, "labels", m, labels.size());
  std::vector<T> probs(m * n);
  T total = 0;
  const auto xd = logits.data();
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= n) throw ShapeError(kOp, "label", n - 1, labels[i]);
    const T* row = xd.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(row[j] - lse);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return detail::make_result<T>(
      kOp, {}, {total / T(m)}, {logits.node()},
      [probs = std::move(probs), lab = std::move(lab), m = m, n = n](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const T k = self.grad[0] / T(m);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            g[i * n + j] += k * (probs[i * n + j] - (j == lab[i] ? T(1) : T(0)));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// indexing

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  constexpr const char* kOp = "gather_rows";
  require_rank(kOp, x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(rows.size() * n);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) throw ShapeError(kOp, "row index", m - 1, rows[r]);
    std::copy_n(xd.data() + rows[r] * n, n, out.data() + r * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return detail::make_result<T>(
      kOp, {rows.size(), n}, std::move(out), {x.node()},
      [idx = std::move(idx), n](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
        }
      });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  constexpr const char* kOp = "slice_rows";
  require_rank(kOp, x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > m) throw ShapeError(kOp, "rows", m, start + count);
  std::vector<T> out(x.data().begin() + start * n,
                     x.data().begin() + (start + count) * n);
  return detail::make_result<T>(
      kOp, {count, n}, std::move(out), {x.node()}, [start, n](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  constexpr const char* kOp = "slice_cols";
  require_rank(kOp, x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > n) throw ShapeError(kOp, "columns", n, start + count);
  std::vector<T> out(m * count);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(xd.data() + i * n + start, count, out.data() + i * count);
  }
  return detail::make_result<T>(
      kOp, {m, count}, std::move(out), {x.node()}, [m, n, start, count](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j)
            g[i * n + start + j] += self.grad[i * count + j];
      });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  constexpr const char* kOp = "concat_cols";
  if (parts.empty()) throw ShapeError(kOp, "parts", 1, 0);
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(kOp, p.shape(), 2);
    require_dim(kOp, "rows", m, p.dim(0));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(m * total);
  std::size_t offset = 0;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data().data() + i * w, w, out.data() + i * total + offset);
    }
    offset += w;
    parents.push_back(p.node());
  }
  return detail::make_result<T>(
      kOp, {m, total}, std::move(out), std::move(parents),
      [widths = std::move(widths), m, total](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          Node<T>& p = *self.parents[k];
          const std::size_t w = widths[k];
          if (p.requires_grad) {
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + off + j];
          }
          off += w;
        }
      });
}

template <typename T>
Tensor<T> replace_rows(const Tensor<T>& x, std::span<const std::size_t> rows,
                       const Tensor<T>& row) {
  constexpr const char* kOp = "replace_rows";
  require_rank(kOp, x.shape(), 2);
  require_rank(kOp, row.shape(), 1);
  const std::size_t m = x.dim(0), n = x.dim(1);
  require_dim(kOp, "columns", n, row.dim(0));
  std::vector<char> replaced(m, 0);
  for (auto r : rows) {
    if (r >= m) throw ShapeError(kOp, "row index", m - 1, r);
    replaced[r] = 1;
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i) {
    if (replaced[i]) std::copy_n(row.data().data(), n, out.data() + i * n);
  }
  return detail::make_result<T>(
      kOp, x.shape(), std::move(out), {x.node(), row.node()},
      [replaced = std::move(replaced), m, n](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pr = *self.parents[1];
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            if (replaced[i]) continue;
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j];
          }
        }
        if (pr.requires_grad) {
          auto& g = pr.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            if (!replaced[i]) continue;
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
          }
        }
      });
}

template <typename T>
Tensor<T> gumbel_softmax_rows(const Tensor<T>& logits, std::span<const T> noise,
                              T tau, bool hard) {
  constexpr const char* kOp = "gumbel_softmax_rows";
  if (!(tau > T(0))) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  const auto [m, n] = as_matrix(kOp, logits.shape());
  if (!noise.empty()) require_dim(kOp, "noise", m * n, noise.size());
  std::vector<T> soft(m * n);
  const auto xd = logits.data();
  std::vector<T> z(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = (xd[i * n + j] + (noise.empty() ? T(0) : noise[i * n + j])) / tau;
    }
    const T mx = *std::max_element(z.begin(), z.end());
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      soft[i * n + j] = std::exp(z[j] - mx);
      total += soft[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) soft[i * n + j] /= total;
  }
  std::vector<T> out = soft;
  if (hard) {
    for (std::size_t i = 0; i < m; ++i) {
      T* row = out.data() + i * n;
      const std::size_t arg = static_cast<std::size_t>(
          std::max_element(soft.data() + i * n, soft.data() + (i + 1) * n) -
          (soft.data() + i * n));
      std::fill(row, row + n, T(0));
      row[arg] = T(1);
    }
  }
  return detail::make_result<T>(
      kOp, logits.shape(), std::move(out), {logits.node()},
      [soft = std::move(soft), m = m, n = n, tau](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          T s = 0;
          for (std::size_t j = 0; j < n; ++j) s += self.grad[i * n + j] * soft[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            g[i * n + j] += soft[i * n + j] * (self.grad[i * n + j] - s) / tau;
          }
        }
      });
}

// ---------------------------------------------------------------------------

#define MUQUANT_INSTANTIATE_OPS(T)                                                   \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                            Conv1dOptions);                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                     \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> transpose(const Tensor<T>&);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                               \
  template Tensor<T> gelu(const Tensor<T>&);                                         \
  template Tensor<T> exp(const Tensor<T>&);                                          \
  template Tensor<T> log(const Tensor<T>&);                                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);                                                  \
  template Tensor<T> softmax(const Tensor<T>&);                                      \
  template Tensor<T> mean_over_axis(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> sum(const Tensor<T>&);                                          \
  template Tensor<T> mean(const Tensor<T>&);                                         \
  template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> cosine_rows(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::size_t>);  \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);    \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                     \
  template Tensor<T> replace_rows(const Tensor<T>&, std::span<const std::size_t>,    \
                                  const Tensor<T>&);                                 \
  template Tensor<T> gumbel_softmax_rows(const Tensor<T>&, std::span<const T>, T, bool);

MUQUANT_INSTANTIATE_OPS(float)
MUQUANT_INSTANTIATE_OPS(double)

#undef MUQUANT_INSTANTIATE_OPS

}  // namespace muquant
