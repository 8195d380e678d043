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

#pragma once

#include <cstddef>

#include <Eigen/Core>

#include "ovfsim/tensor.hpp"

namespace ovfsim::detail {

enum class Trans { kNo, kYes };

/// C[m x n] (+)= op(A) . op(B) over row-major buffers, where op(A) is m x k
/// and op(B) is k x n. Eigen backs the kernel; it is single-threaded and
/// deterministic for fixed shapes.
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const Real* a,
                 const Real* b, Real* c, bool accumulate) {
  using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMat> out(c, mi, ni);
  const ConstMap A = ta == Trans::kNo ? ConstMap(a, mi, ki) : ConstMap(a, ki, mi);
  const ConstMap B = tb == Trans::kNo ? ConstMap(b, ki, ni) : ConstMap(b, ni, ki);
  auto apply = [&](const auto& product) {
    if (accumulate) {
      out.noalias() += product;
    } else {
      out.noalias() = product;
    }
  };
  if (ta == Trans::kNo && tb == Trans::kNo) {
    apply(A * B);
  } else if (ta == Trans::kNo) {
    apply(A * B.transpose());
  } else if (tb == Trans::kNo) {
    apply(A.transpose() * B);
  } else {
    apply(A.transpose() * B.transpose());
  }
}

}  // namespace ovfsim::detail
