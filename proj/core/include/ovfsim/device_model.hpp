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

// NVM crossbar programming model.
//
// A weight tensor W is quantized per tensor to M-bit magnitudes
//
//   scale  = max|W| / (2^M - 1)
//   level  = round(|W| / scale)             in [0, 2^M - 1]
//   W_d    = sign(W) * level * scale
//
// and each level is bit-sliced little-endian across M/K devices of K bits:
// device j stores bits [jK, jK + K). Programming adds i.i.d. Gaussian
// conductance error dg_j to every device, which reconstructs to
//
//   W_p = W_d + sign(W) * scale * sum_j dg_j * 2^(jK).
//
// Conductance is kept in integer level units, so the largest conductance of
// one device is 2^K - 1. Negative weights use sign-magnitude mapping (the
// magnitude lives on a separate crossbar); perturbed conductances are not
// clipped.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ovfsim/autodiff.hpp"
#include "ovfsim/rng.hpp"
#include "ovfsim/tensor.hpp"

namespace ovfsim {

/// How sigma_d maps to the standard deviation of dg (in level units).
enum class NoiseScale {
  /// std(dg) = sigma_d * (2^K - 1): sigma_d is relative to the maximal
  /// conductance of one device.
  kMaxConductance,
  /// std(dg) = sigma_d.
  kLiteral,
};

/// sigma_d above this still works but is outside the usual device regime.
inline constexpr double kRecommendedMaxSigma = 0.4;

struct DeviceConfig {
  int weight_bits = 8;  // M
  int device_bits = 2;  // K
  double sigma_d = 0.0;
  NoiseScale noise_scale = NoiseScale::kMaxConductance;

  int devices_per_weight() const { return weight_bits / device_bits; }
  std::uint32_t max_level() const { return (std::uint32_t{1} << weight_bits) - 1; }
  std::uint32_t max_device_level() const { return (std::uint32_t{1} << device_bits) - 1; }
  /// Standard deviation of dg for this config.
  double conductance_sigma() const;
};

/// Throws ValidationError for unusable configs (M not a multiple of K, bit
/// widths out of range, negative sigma). Returns human-readable warnings,
/// e.g. for sigma_d above kRecommendedMaxSigma.
std::vector<std::string> validate(const DeviceConfig& config);

struct QuantizedLayer {
  Shape shape;
  std::vector<std::int8_t> sign;  // +1 / -1; zero weights map to +1
  std::vector<std::uint32_t> levels;
  double scale = 0.0;
  /// devices_per_weight() entries per weight, least significant first.
  std::vector<std::uint32_t> device_levels;

  std::size_t size() const { return levels.size(); }
};

/// Per-tensor M-bit sign-magnitude quantization. An all-zero tensor yields
/// scale 0 and all-zero levels.
QuantizedLayer quantize(const Tensor& weights, const DeviceConfig& config);

/// Splits each level into devices_per_weight() K-bit device levels.
std::vector<std::uint32_t> slice_to_devices(std::span<const std::uint32_t> levels,
                                            const DeviceConfig& config);
/// Inverse of slice_to_devices: sum_j g_j * 2^(jK).
std::vector<std::uint32_t> assemble_levels(std::span<const std::uint32_t> device_levels,
                                           const DeviceConfig& config);

/// The noise-free quantized weights W_d.
Tensor desired_weights(const QuantizedLayer& layer);

/// Programs the layer with fresh dg ~ N(0, conductance_sigma()^2) per device.
Tensor perturb(const QuantizedLayer& layer, const DeviceConfig& config, Rng& rng);
/// Same as above with caller-supplied standard normals, one per device
/// (size() * devices_per_weight() values, weight-major).
Tensor perturb(const QuantizedLayer& layer, const DeviceConfig& config,
               std::span<const double> unit_normals);

/// Closed-form std of W_p - W_d for one weight:
/// scale * conductance_sigma() * sqrt(sum_j 4^(jK)).
double perturbation_stddev(double scale, const DeviceConfig& config);

/// quantize followed by perturb.
Tensor perturbed_forward_weights(const Tensor& weights, const DeviceConfig& config, Rng& rng);
/// Graph version: forward value is the programmed weight, the gradient passes
/// straight through to `weights`.
Var perturbed_forward_weights(Var weights, const DeviceConfig& config, Rng& rng);

}  // namespace ovfsim
