// Copyright 2026 The FEAT Authors
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
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "feat/tensor.hpp"

namespace feat::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Tensor-granular reverse-mode tape.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// topological order for the backward sweep. A node only records a backward
/// closure when at least one parent requires a gradient; passes over frozen
/// inputs (the generator's weights, the original synthesis pass) therefore
/// cost no more than a plain forward evaluation.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf owning its value.
  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  /// Leaf borrowing an external tensor, which must outlive the tape.
  Var leaf_ref(const Tensor& value, bool requires_grad = false) {
    Node n;
    n.borrowed = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an interior node. `backward` runs only if some parent requires a
  /// gradient; it reads this node's gradient and accumulates into parents.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  Var record(Tensor value, std::span<const Var> parents, Backward backward) {
    Node n;
    n.owned = std::move(value);
    for (const Var& p : parents) {
      if (p.tape != this) throw ArgumentError("autodiff: mixing vars from different tapes");
      n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
  }
  const Tensor& value(Var v) const { return value(v.id); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }

  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  /// Gradient of the last backward() root with respect to v (zeros if v was
  /// not reached).
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.has_grad) return n.grad;
    return Tensor(value(v).shape(), 0.0);
  }

  const Tensor& grad_ref(std::size_t id) const { return nodes_[id].grad; }

  /// Zero-initialised gradient buffer for accumulation, or nullptr when the
  /// node does not require a gradient.
  Tensor* grad_acc(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor(value(id).shape(), 0.0);
      n.has_grad = true;
    }
    return &n.grad;
  }
  Tensor* grad_acc(Var v) { return grad_acc(v.id); }

  /// Seeds d(root)/d(root) = seed (root must be a single value) and sweeps.
  void backward(Var root, double seed = 1.0) {
    if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    Tensor* g = grad_acc(root);
    if (g == nullptr) return;
    (*g)[0] = seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  // Values are handed out by reference, so storage must not relocate.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }
inline bool Var::requires_grad() const { return tape->requires_grad(*this); }

}  // namespace feat::ad
