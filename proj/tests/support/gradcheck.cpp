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

#include "support/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ovfsim/rng.hpp"

namespace ovfsim::testing {

GradCheck compare_with_central_differences(const std::vector<Tensor*>& inputs,
                                           const std::function<double()>& f,
                                           const std::vector<std::vector<Real>>& analytic, double h) {
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = *inputs[t];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Real saved = x[i];
      x[i] = saved + h;
      const double up = f();
      x[i] = saved - h;
      const double down = f();
      x[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      out.max_abs_diff = std::max(out.max_abs_diff, std::abs(a - numeric));
      ++out.checked;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
  out.rel_error = std::sqrt(diff2) / denom;
  return out;
}

GradCheck check_gradients(const std::vector<Tensor*>& inputs, const LossBuilder& build, double h) {
  std::vector<std::vector<Real>> analytic;
  {
    for (Tensor* x : inputs) x->zero_grad();
    Graph graph;
    std::vector<Var> vars;
    for (Tensor* x : inputs) vars.push_back(graph.parameter(*x));
    graph.backward(build(graph, vars));
    for (Tensor* x : inputs) {
      const auto g = std::as_const(*x).grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }
  auto f = [&] {
    Graph graph(GradMode::kDisabled);
    std::vector<Var> vars;
    for (Tensor* x : inputs) vars.push_back(graph.parameter(*x));
    return build(graph, vars).value()[0];
  };
  return compare_with_central_differences(inputs, f, analytic, h);
}

Var probe(Var y) {
  Graph& g = y.graph();
  const Var flat = flatten(y);
  const std::size_t rows = flat.value().dim(0);
  const std::size_t cols = flat.value().size() / rows;
  const Var l = g.constant(random_tensor({1, rows}, 0x9e11));
  const Var r = g.constant(random_tensor({cols, 1}, 0x9e12));
  return sum(matmul(matmul(l, flat), r));
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace ovfsim::testing
