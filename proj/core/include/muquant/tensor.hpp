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

// muquant/tensor.hpp
//
// Dense row-major tensors with reverse-mode differentiation. A Tensor is a
// cheap handle onto a graph node; ops in ops.hpp build new nodes and record
// the closures needed to propagate gradients back to their parents.

#ifndef MUQUANT_TENSOR_HPP_
#define MUQUANT_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace muquant {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when operand shapes are incompatible. Carries the op and the
/// offending dimension so callers can report it without parsing the message.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, std::string dimension, std::size_t expected,
             std::size_t actual);

  const std::string& op() const noexcept { return op_; }
  const std::string& dimension() const noexcept { return dimension_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string op_;
  std::string dimension_;
  std::size_t expected_;
  std::size_t actual_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// In-place access to a leaf's values (optimizer updates, initialization).
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros of the right shape when nothing accumulated.
  std::vector<T> grad() const;
  void zero_grad() { node_->grad.clear(); }

  /// Leaf copy of the values with no history.
  Tensor detach() const;
  Tensor clone_leaf() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs reverse-mode differentiation from a scalar loss. Traversal order is a
/// deterministic reverse topological order of the graph. Throws
/// std::logic_error when called again on the same loss without reset_backward.
template <typename T>
void backward(const Tensor<T>& loss);

/// Clears every gradient buffer reachable from `loss` and re-arms backward.
template <typename T>
void reset_backward(const Tensor<T>& loss);

/// True while graph recording is enabled on this thread.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Builds an op result node; parents are kept only when a gradient can flow.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

}  // namespace muquant

#endif  // MUQUANT_TENSOR_HPP_
