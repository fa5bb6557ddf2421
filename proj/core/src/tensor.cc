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

#include "twoway/tensor.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <type_traits>
#include <unordered_set>

namespace twoway {

namespace {
thread_local bool grad_enabled = true;
bool check_finite = true;
}  // namespace

std::string ShapeToString(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }
bool GradEnabled() { return grad_enabled; }

void SetCheckFinite(bool on) { check_finite = on; }
bool CheckFiniteEnabled() { return check_finite; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(NumElements(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : node_(std::make_shared<Node<T>>()) {
  if (NumElements(shape) != values.size()) {
    throw DimensionError("tensor shape " + ShapeToString(shape) + " holds " +
                         std::to_string(NumElements(shape)) +
                         " elements but " + std::to_string(values.size()) +
                         " values were given");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::Scalar0(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::Vector(std::vector<T> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::Matrix(std::size_t rows, std::size_t cols,
                            std::vector<T> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::Matrix(std::initializer_list<std::initializer_list<T>> rows) {
  std::vector<T> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return node_->shape.empty() ? 1 : node_->shape.front();
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return node_->shape.empty() ? 1 : node_->shape.back();
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + ShapeToString(shape()));
  }
  return node_->value[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename T>
Tensor<T> Tensor<T>::FromNode(std::shared_ptr<Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
Tape<T> Tape<T>::Record(const Tensor<T>& root) {
  Tape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS; inputs are emitted before their consumers.
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  tape.keep_alive_.push_back(root.node_ptr());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::Backward() {
  if (nodes_.empty()) return;
  Node<T>* root = nodes_.back();
  auto& seed = root->GradBuffer();
  for (auto& g : seed) g += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->leaf) continue;
    if (node->backward && node->grad.size() == node->value.size()) {
      node->backward(*node);
    }
    // Intermediate gradients are consumed exactly once; release them so a
    // second pass over a retained graph cannot double count.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? ShapeToString(loss.shape())
                                         : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw PreconditionError("backward() on a loss that is not on the tape");
  }
  Tape<T>::Record(loss).Backward();
}

namespace {

// Branch-free exponent test so the scan vectorizes.
template <typename T>
bool AllFinite(std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits kExponent = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) bad |= Bits((std::bit_cast<Bits>(v) & kExponent) == kExponent);
  return bad == 0;
}

}  // namespace

namespace detail {

template <typename T>
Tensor<T> MakeResult(const char* op, Shape shape, std::vector<T> value,
                     std::vector<Tensor<T>> inputs,
                     std::function<void(Node<T>&)> backward) {
  if (check_finite && !AllFinite(std::span<const T>(value))) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor<T>& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->leaf = false;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::FromNode(std::move(node));
}

template Tensor<float> MakeResult(const char*, Shape, std::vector<float>,
                                  std::vector<Tensor<float>>,
                                  std::function<void(Node<float>&)>);
template Tensor<double> MakeResult(const char*, Shape, std::vector<double>,
                                   std::vector<Tensor<double>>,
                                   std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace twoway
