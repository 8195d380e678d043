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

// Experiment configuration. Stored as JSON; see configs/ for examples.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ovfsim/dataset.hpp"
#include "ovfsim/device_model.hpp"
#include "ovfsim/evaluation.hpp"
#include "ovfsim/models.hpp"
#include "ovfsim/training.hpp"

namespace ovfsim {

enum class DatasetSource { kMnistIdx, kSynthetic };
std::string_view to_string(DatasetSource v);
DatasetSource parse_dataset_source(std::string_view text);

struct DatasetConfig {
  DatasetSource source = DatasetSource::kSynthetic;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  SyntheticDatasetSpec synthetic;
  /// Synthetic test set size per class.
  std::size_t synthetic_test_per_class = 50;
  /// Keep only the first n samples (0 = all).
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

struct EvalConfig {
  std::size_t runs = kDefaultMonteCarloRuns;
  std::vector<double> sigma_grid{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
  KlDirection kl_direction = KlDirection::kLabelToOutput;
  std::size_t threads = 1;
  std::size_t chunk = 500;
  double convergence_threshold = kDefaultConvergenceThreshold;
};

struct BetaSearchConfig {
  std::vector<double> candidates{std::begin(kBetaCandidates), std::end(kBetaCandidates)};
  /// Carved from the end of the training set; candidates are scored there.
  std::size_t validation_size = 1000;
  std::size_t runs = 50;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelSpec model;
  /// train.device.sigma_d is the training noise level. train.ovf is unused;
  /// train_config() attaches `ovf` for the OVF regime.
  TrainConfig train;
  OvfConfig ovf;
  EvalConfig eval;
  BetaSearchConfig beta_search;
  std::filesystem::path output_dir = "out";
  /// Input checkpoint for eval.
  std::filesystem::path checkpoint;
  std::uint64_t seed = 0;
  /// Training seeds for sweep; defaults to {seed}.
  std::vector<std::uint64_t> seeds;

  /// The TrainConfig for `regime` at training noise `sigma_d` and `seed`.
  TrainConfig train_config(Regime regime, double sigma_d, std::uint64_t seed) const;
  std::vector<std::uint64_t> sweep_seeds() const;
};

/// Throws UsageError describing the first problem found.
void validate(const ExperimentConfig& config);

/// Parses a config document. Unknown keys are rejected. Relative dataset
/// paths are resolved against `base_dir`. A run manifest is accepted too;
/// its "config" member is used.
ExperimentConfig parse_config(std::string_view json_text,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full snapshot with every key spelled out (paths absolute).
std::string to_json(const ExperimentConfig& config, int indent = 2);

/// Loads the train and test sets described by `config`.
struct LoadedData {
  Dataset train;
  Dataset test;
};
LoadedData load_data(const ExperimentConfig& config);

}  // namespace ovfsim
