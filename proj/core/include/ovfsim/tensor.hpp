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
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ovfsim {

/// Project-wide floating point type.
using Real = double;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major n-dimensional array with an optional gradient slot.
///
/// Invariants: numel(shape()) == data().size(), and grad() (when present)
/// has the same length as data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0);
  /// Throws DimensionError when `data.size() != numel(shape)`.
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real value) { return Tensor(Shape{1}, std::vector<Real>{value}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Real{1}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool has_grad() const noexcept { return grad_.has_value(); }
  /// Allocates a zero gradient if absent.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{0};
  std::vector<Real> data_;
  std::optional<std::vector<Real>> grad_;
};

}  // namespace ovfsim
