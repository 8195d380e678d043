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
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ovfsim/tensor.hpp"

namespace ovfsim {

/// Inputs [n x c x h x w] with integer class labels.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  /// Samples at `indices`, in that order.
  Dataset gather(std::span<const std::size_t> indices) const;
  /// The first `count` samples (or all of them).
  Dataset head(std::size_t count) const;
};

/// Reads an IDX image/label pair (magic 0x00000803 / 0x00000801). Files may be
/// gzip-compressed. Pixels are scaled to [0, 1]; the result is n x 1 x rows x
/// cols. Throws BadMagicError, TruncatedError, CountMismatchError or IoError.
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes an uncompressed IDX pair; pixels are rounded from [0, 1] to bytes.
void write_mnist_idx(const Dataset& data, const std::filesystem::path& images,
                     const std::filesystem::path& labels);

/// Isotropic unit-variance Gaussian clusters. Class c has mean
/// `separation * e_{c * stride}` with stride = input_dim / num_classes, so the
/// means are orthogonal and equidistant.
struct SyntheticDatasetSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 100;
  std::size_t input_dim = 64;
  double separation = 4.0;
  /// Shape of one sample; defaults to 1 x 1 x input_dim when zero-filled.
  std::size_t image_side = 0;
};

void validate(const SyntheticDatasetSpec& spec);

/// Deterministic given `seed`; samples are interleaved by class.
Dataset make_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed);

/// Accuracy of the Bayes-optimal classifier for the cluster model:
/// integral of phi(z) * Phi(z + separation)^(C - 1) dz, evaluated by
/// composite Simpson quadrature.
double synthetic_bayes_accuracy(const SyntheticDatasetSpec& spec);

}  // namespace ovfsim
