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

// Central finite-difference checks for the autodiff engine.

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ovfsim/autodiff.hpp"
#include "ovfsim/tensor.hpp"

namespace ovfsim::testing {

struct GradCheck {
  /// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2).
  double rel_error = 0.0;
  double max_abs_diff = 0.0;
  std::size_t checked = 0;
};

/// Builds the scalar loss from leaves bound to `inputs` (same order).
using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Analytic gradient from one backward pass, numeric gradient from
/// (f(x + h) - f(x - h)) / 2h per element with gradients disabled.
GradCheck check_gradients(const std::vector<Tensor*>& inputs, const LossBuilder& build, double h = 1e-6);

/// Same comparison for an arbitrary scalar function whose analytic gradient
/// the caller already computed (one vector per input).
GradCheck compare_with_central_differences(const std::vector<Tensor*>& inputs,
                                           const std::function<double()>& f,
                                           const std::vector<std::vector<Real>>& analytic, double h = 1e-6);

/// Reduces any tensor to a scalar with fixed pseudo-random weights:
/// l^T . flatten(y) . r, so every element gets a distinct gradient.
Var probe(Var y);

/// Tensor of uniform(-1, 1) values.
Tensor random_tensor(Shape shape, std::uint64_t seed);

}  // namespace ovfsim::testing
