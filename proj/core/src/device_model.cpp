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

#include "ovfsim/device_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ovfsim/error.hpp"

namespace ovfsim {

double DeviceConfig::conductance_sigma() const {
  switch (noise_scale) {
    case NoiseScale::kMaxConductance:
      return sigma_d * static_cast<double>(max_device_level());
    case NoiseScale::kLiteral:
      return sigma_d;
  }
  return sigma_d;
}

std::vector<std::string> validate(const DeviceConfig& config) {
  if (config.weight_bits < 1 || config.weight_bits > 31) {
    throw ValidationError("device: weight_bits must be in [1, 31], got " +
                          std::to_string(config.weight_bits));
  }
  if (config.device_bits < 1 || config.device_bits > config.weight_bits) {
    throw ValidationError("device: device_bits must be in [1, weight_bits], got " +
                          std::to_string(config.device_bits));
  }
  if (config.weight_bits % config.device_bits != 0) {
    throw ValidationError("device: weight_bits (" + std::to_string(config.weight_bits) +
                          ") must be a multiple of device_bits (" +
                          std::to_string(config.device_bits) + ")");
  }
  if (!(config.sigma_d >= 0.0) || !std::isfinite(config.sigma_d)) {
    throw ValidationError("device: sigma_d must be finite and >= 0");
  }
  std::vector<std::string> warnings;
  if (config.sigma_d > kRecommendedMaxSigma) {
    std::ostringstream msg;
    msg << "sigma_d = " << config.sigma_d << " exceeds the usual device regime (<= "
        << kRecommendedMaxSigma << ")";
    warnings.push_back(msg.str());
  }
  return warnings;
}

std::vector<std::uint32_t> slice_to_devices(std::span<const std::uint32_t> levels,
                                            const DeviceConfig& config) {
  validate(config);
  const int per = config.devices_per_weight();
  const std::uint32_t mask = config.max_device_level();
  std::vector<std::uint32_t> out;
  out.reserve(levels.size() * static_cast<std::size_t>(per));
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::uint32_t level = levels[i];
    if (level > config.max_level()) {
      throw ValidationError("slice_to_devices: level " + std::to_string(level) + " at index " +
                            std::to_string(i) + " exceeds 2^M-1 = " +
                            std::to_string(config.max_level()));
    }
    for (int j = 0; j < per; ++j) out.push_back((level >> (j * config.device_bits)) & mask);
  }
  return out;
}

std::vector<std::uint32_t> assemble_levels(std::span<const std::uint32_t> device_levels,
                                           const DeviceConfig& config) {
  validate(config);
  const auto per = static_cast<std::size_t>(config.devices_per_weight());
  if (device_levels.size() % per != 0) {
    throw DimensionError("assemble_levels: " + std::to_string(device_levels.size()) +
                         " device levels is not a multiple of " + std::to_string(per));
  }
  std::vector<std::uint32_t> out(device_levels.size() / per, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < per; ++j) {
      out[i] += device_levels[i * per + j] << (j * static_cast<std::size_t>(config.device_bits));
    }
  }
  return out;
}

QuantizedLayer quantize(const Tensor& weights, const DeviceConfig& config) {
  validate(config);
  if (!weights.all_finite()) throw ValidationError("quantize: weights contain NaN/Inf");
  QuantizedLayer layer;
  layer.shape = weights.shape();
  layer.sign.resize(weights.size());
  layer.levels.resize(weights.size());

  double max_abs = 0.0;
  for (Real w : weights.data()) max_abs = std::max(max_abs, std::abs(w));
  const double max_level = static_cast<double>(config.max_level());
  layer.scale = max_abs / max_level;

  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Real w = weights[i];
    layer.sign[i] = w < 0 ? std::int8_t{-1} : std::int8_t{1};
    if (max_abs > 0.0) {
      const double q = std::round(std::abs(w) * max_level / max_abs);
      layer.levels[i] = static_cast<std::uint32_t>(std::min(q, max_level));
    }
  }
  layer.device_levels = slice_to_devices(layer.levels, config);
  return layer;
}

Tensor desired_weights(const QuantizedLayer& layer) {
  Tensor out(layer.shape);
  for (std::size_t i = 0; i < layer.size(); ++i) {
    out[i] = layer.sign[i] * (static_cast<double>(layer.levels[i]) * layer.scale);
  }
  return out;
}

Tensor perturb(const QuantizedLayer& layer, const DeviceConfig& config,
               std::span<const double> unit_normals) {
  const auto per = static_cast<std::size_t>(config.devices_per_weight());
  if (unit_normals.size() != layer.size() * per) {
    throw DimensionError("perturb: need " + std::to_string(layer.size() * per) +
                         " unit normals, got " + std::to_string(unit_normals.size()));
  }
  Tensor out = desired_weights(layer);
  const double sigma = config.conductance_sigma();
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < layer.size(); ++i) {
    double dw = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const double place = std::ldexp(1.0, static_cast<int>(j) * config.device_bits);
      dw += sigma * unit_normals[i * per + j] * place;
    }
    out[i] += layer.sign[i] * layer.scale * dw;
  }
  return out;
}

Tensor perturb(const QuantizedLayer& layer, const DeviceConfig& config, Rng& rng) {
  if (config.conductance_sigma() == 0.0) return desired_weights(layer);
  std::vector<double> z(layer.size() * static_cast<std::size_t>(config.devices_per_weight()));
  for (double& v : z) v = rng.normal();
  return perturb(layer, config, z);
}

double perturbation_stddev(double scale, const DeviceConfig& config) {
  double sum = 0.0;
  for (int j = 0; j < config.devices_per_weight(); ++j) {
    sum += std::ldexp(1.0, 2 * j * config.device_bits);
  }
  return scale * config.conductance_sigma() * std::sqrt(sum);
}

Tensor perturbed_forward_weights(const Tensor& weights, const DeviceConfig& config, Rng& rng) {
  return perturb(quantize(weights, config), config, rng);
}

Var perturbed_forward_weights(Var weights, const DeviceConfig& config, Rng& rng) {
  return straight_through(weights, perturbed_forward_weights(weights.value(), config, rng));
}

}  // namespace ovfsim
