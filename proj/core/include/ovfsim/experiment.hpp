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

// The subcommands behind the CLI. Each writes its outputs plus manifest.json
// into config.output_dir.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ovfsim/config.hpp"
#include "ovfsim/evaluation.hpp"
#include "ovfsim/report.hpp"
#include "ovfsim/training.hpp"

namespace ovfsim {

inline constexpr const char* kManifestName = "manifest.json";

/// Monte Carlo seed used to evaluate models trained with `train_seed`. Shared
/// by every regime, so regimes are compared on the same chip draws.
std::uint64_t eval_seed(std::uint64_t train_seed);

EvalOptions eval_options(const ExperimentConfig& config, std::uint64_t train_seed);

/// Writes config snapshot, seed, command and code version.
void write_manifest(const ExperimentConfig& config, std::string_view command,
                    const std::vector<std::string>& outputs);

struct TrainOutputs {
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
};
/// train: config.train.regime at config.train.device.sigma_d.
TrainOutputs run_train(const ExperimentConfig& config, std::ostream& log);

/// eval: config.checkpoint over config.eval.sigma_grid; writes eval.csv.
std::vector<ReportRow> run_eval(const ExperimentConfig& config, std::ostream& log);

/// One (regime, sigma_d) cell of a sweep.
struct SweepCell {
  Regime regime = Regime::kVanilla;
  double sigma_d = 0.0;
  /// Per training seed, in config.sweep_seeds() order.
  std::vector<EvalReport> per_seed;
  std::vector<bool> trained_converged;
  /// Runs of every seed pooled.
  EvalReport pooled;
  /// Seeds whose training diverged or whose accuracy fell more than the
  /// convergence threshold below the mean over seeds.
  std::size_t nonconverged = 0;
};

struct SweepOptions {
  std::vector<Regime> regimes{Regime::kVanilla, Regime::kNoiseInjection, Regime::kOvf};
  /// Where to save one checkpoint per trained model; empty = don't.
  std::filesystem::path checkpoint_dir;
};

/// Trains every regime at every grid sigma for every seed and evaluates it at
/// that sigma. Vanilla does not depend on sigma and is trained once per seed.
std::vector<SweepCell> sweep(const ExperimentConfig& config, const LoadedData& data,
                             const SweepOptions& options, std::ostream& log);

/// sweep: writes sweep.csv (3 x |grid| rows) and checkpoints/.
std::vector<ReportRow> run_sweep(const ExperimentConfig& config, std::ostream& log);

/// beta-search: trains OVF once per candidate at config.train.device.sigma_d
/// on the training set minus a held-out tail, scores it by Monte Carlo
/// accuracy on that tail, prints one row per candidate and writes
/// beta_search.csv.
BetaSearchResult run_beta_search(const ExperimentConfig& config, std::ostream& out);

/// report: renders report CSVs as a plain-text table.
std::string run_report(const std::vector<std::filesystem::path>& csv_files);

}  // namespace ovfsim
