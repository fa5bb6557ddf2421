// Copyright 2026 The twoway Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace twoway {

using Shape = std::vector<std::size_t>;

std::string ShapeToString(const Shape& shape);
std::size_t NumElements(const Shape& shape);

// Error taxonomy shared by every module.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class Tensor;

// One vertex of the dynamic graph. Non-leaf nodes remember their inputs and
// a closure that pushes `grad` into the inputs' gradients.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& GradBuffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Dense row-major tensor handle. Copies share the underlying node, the way a
// parameter handle is shared between a model and its optimizer.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor Scalar0(T value);
  static Tensor Vector(std::vector<T> values);
  static Tensor Matrix(std::size_t rows, std::size_t cols, std::vector<T> values);
  static Tensor Matrix(std::initializer_list<std::initializer_list<T>> rows);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  // Leading extent for rank >= 1 (1 for scalars).
  std::size_t rows() const;
  // Trailing extent for rank >= 1 (1 for scalars).
  std::size_t cols() const;

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->GradBuffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf with copied values and no graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  static Tensor FromNode(std::shared_ptr<Node<T>> node);

 private:
  std::shared_ptr<Node<T>> node_;
};

// Topologically ordered record of the ops reachable from a root.
template <typename T>
class Tape {
 public:
  static Tape Record(const Tensor<T>& root);

  const std::vector<Node<T>*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and visits every node once in reverse order.
  void Backward();

 private:
  std::vector<Node<T>*> nodes_;
  std::vector<std::shared_ptr<Node<T>>> keep_alive_;
};

// Populates grad for every requires_grad tensor reachable from `loss`.
// Gradients of leaves accumulate across calls until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradEnabled();

// When on (the default) every forward op verifies that its output is finite.
void SetCheckFinite(bool on);
bool CheckFiniteEnabled();

namespace detail {

// Builds an op result. Records `inputs` and `backward` only when grad mode is
// on and at least one input requires grad.
template <typename T>
Tensor<T> MakeResult(const char* op, Shape shape, std::vector<T> value,
                     std::vector<Tensor<T>> inputs,
                     std::function<void(Node<T>&)> backward);

}  // namespace detail

}  // namespace twoway
