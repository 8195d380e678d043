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
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ovfsim/dataset.hpp"
#include "ovfsim/device_model.hpp"
#include "ovfsim/models.hpp"

namespace ovfsim {

inline constexpr std::size_t kDefaultMonteCarloRuns = 200;
inline constexpr double kDefaultConvergenceThreshold = 0.05;

/// Direction of the KL divergence between the one-hot label and the softmax.
enum class KlDirection {
  /// KL(label || softmax) = -log p[label].
  kLabelToOutput,
  /// KL(softmax || label); infinite unless the softmax is exactly one-hot.
  kOutputToLabel,
};
std::string_view to_string(KlDirection d);
KlDirection parse_kl_direction(std::string_view text);

struct EvalOptions {
  std::size_t runs = kDefaultMonteCarloRuns;
  std::uint64_t seed = 0;
  KlDirection kl_direction = KlDirection::kLabelToOutput;
  /// Worker threads. Run r always draws from substream (seed, r), so results
  /// do not depend on this value.
  std::size_t threads = 1;
  std::size_t chunk = 500;
};

struct ConvergenceInfo {
  bool converged = true;
  double threshold = kDefaultConvergenceThreshold;
};

struct EvalReport {
  double sigma_d = 0.0;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  /// Sample standard deviation over runs (0 for a single run).
  double std_accuracy = 0.0;
  /// 1.96 * std / sqrt(runs); reported as 0 with ci_defined == false when
  /// runs < 2.
  double ci95_halfwidth = 0.0;
  bool ci_defined = false;
  /// Mean KL over correct predictions pooled across runs; empty when there
  /// were no correct predictions.
  std::optional<double> mean_ekl;
  std::size_t correct_predictions = 0;
  std::vector<double> per_run_accuracies;
  ConvergenceInfo convergence;
};

/// KL contribution of one sample.
double kl_divergence(std::span<const Real> logits, std::size_t label, KlDirection direction);

/// Pools KL contributions of correctly classified samples.
class EklAccumulator {
 public:
  explicit EklAccumulator(KlDirection direction = KlDirection::kLabelToOutput) : direction_(direction) {}
  /// Adds every correct row of `logits` [n x classes]; returns how many rows
  /// were correct (argmax, ties to the lowest index).
  std::size_t add(const Tensor& logits, std::span<const int> labels);
  void merge(const EklAccumulator& other);
  std::size_t count() const { return count_; }
  std::optional<double> mean() const;

 private:
  KlDirection direction_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

/// Mean / sample std / CI of per-run accuracies.
EvalReport summarize_runs(std::vector<double> accuracies, double sigma_d);

/// Every run programs a fresh chip: all weight tensors are perturbed through
/// the device model at device.sigma_d, then the whole dataset is classified.
/// At sigma_d = 0 every run uses the unquantized weights (clean accuracy).
EvalReport monte_carlo_eval(const ParamSet& params, const ModelSpec& spec, const Dataset& data,
                            const DeviceConfig& device, const EvalOptions& options = {});

struct EklResult {
  std::optional<double> value;  // empty: no correct predictions, EKL undefined
  std::size_t correct_predictions = 0;
};

/// EKL alone; draws the same chips as monte_carlo_eval for equal options.
EklResult ekl_divergence(const ParamSet& params, const ModelSpec& spec, const Dataset& data,
                         const DeviceConfig& device, const EvalOptions& options = {});

struct ConvergenceStats {
  double mean = 0.0;
  double threshold = kDefaultConvergenceThreshold;
  std::size_t nonconverged = 0;
  std::vector<std::size_t> indices;
};

/// A run is non-converged iff its accuracy < mean - threshold. Needs at
/// least two runs (ValidationError otherwise).
ConvergenceStats convergence_stats(std::span<const double> accuracies,
                                   double threshold = kDefaultConvergenceThreshold);

}  // namespace ovfsim
