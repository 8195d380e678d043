// Copyright 2026 The ovfsim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tape-style reverse-mode automatic differentiation.
//
// A Graph records every operation in creation order, so the tape is already
// topologically sorted and backward() is a single reverse sweep. Graphs are
// built fresh for each training iteration and discarded afterwards.
//
// Parameters enter a graph through Graph::parameter(). Each call creates a new
// leaf bound to the same Tensor; during backward every such leaf adds (+=) its
// gradient into Tensor::grad(). Running several forwards over the same
// parameters therefore sums their contributions, and callers zero the
// gradient slots themselves between iterations.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ovfsim/tensor.hpp"

namespace ovfsim {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// View handed to backward rules.
class BackwardContext {
 public:
  std::span<const Real> grad_output() const { return grad_output_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  /// Gradient buffer of input `i`, zero-initialised on first access.
  std::span<Real> input_grad(std::size_t i);

 private:
  friend class Graph;
  BackwardContext(Graph& graph, std::size_t node, std::span<const Real> grad_output)
      : graph_(graph), node_(node), grad_output_(grad_output) {}

  Graph& graph_;
  std::size_t node_;
  std::span<const Real> grad_output_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

enum class GradMode { kEnabled, kDisabled };

class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::kEnabled) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return mode_ == GradMode::kEnabled; }

  /// Leaf bound to `param`; backward accumulates into param.grad(). With
  /// gradients disabled this degrades to a constant copy.
  Var parameter(Tensor& param);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends an operation node. `backward` may be empty when no input needs
  /// a gradient; it is dropped automatically in that case anyway.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Throws ContractError if `loss` is not
  /// a single-element tensor of this graph, or if called twice.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of nodes whose backward rule ran during the last backward().
  std::size_t visited() const noexcept { return visited_; }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool requires_grad = false;
  };

  void check_owner(Var v) const;

  GradMode mode_;
  std::vector<Node> nodes_;
  std::vector<std::vector<Real>> grads_;
  std::size_t visited_ = 0;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All operands must belong to the same graph.

/// [m x k] . [k x n] -> [m x n].
Var matmul(Var a, Var b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of input [n x c x h x w] with kernel [o x c x kh x kw],
/// zero padding. Output spatial extent is floor((h + 2p - kh) / stride) + 1.
Var conv2d(Var input, Var kernel, Conv2dOptions options = {});

Var relu(Var x);
Var add(Var a, Var b);
Var scale(Var x, Real c);
/// Adds bias[c] along axis 1 of x (x is [n x c] or [n x c x ...]).
Var bias_add(Var x, Var bias);
/// [n x ...] -> [n x rest].
Var flatten(Var x);
/// Non-overlapping max pooling with window == stride == `window`; ties go to
/// the first element in row-major order.
Var maxpool2d(Var x, std::size_t window = 2);
/// Sum of coef_i * T_i over same-shaped tensors.
Var linear_combination(std::span<const std::pair<Real, Var>> terms);
Var sum(Var x);
/// Row-wise softmax of [n x classes].
Var softmax(Var logits);
/// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// Mean over the batch of -log(max(p[label] / normaliser, floor)). Used when
/// combining probability outputs, which need not sum to one.
Var probability_nll(Var probs, std::span<const int> labels, Real normaliser = 1,
                    Real floor = 1e-12);
/// Forward value is `replacement`, backward is the identity onto `x`.
Var straight_through(Var x, Tensor replacement);

// ---------------------------------------------------------------------------
// Graph-free helpers.

/// Row-wise softmax, max-subtracted.
Tensor softmax_rows(const Tensor& logits);
/// log softmax(row)[index] for one row of logits.
Real log_softmax_at(std::span<const Real> row, std::size_t index);
/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(std::span<const Real> row);

}  // namespace ovfsim
