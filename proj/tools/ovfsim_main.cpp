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

// ovfsim command-line driver.
//
// Exit status: 0 success, 2 usage error (bad flag, malformed config, missing
// input file), 1 runtime failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ovfsim/config.hpp"
#include "ovfsim/error.hpp"
#include "ovfsim/experiment.hpp"
#include "ovfsim/runtime.hpp"
#include "ovfsim/version.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Flags shared by the experiment subcommands. Anything set here wins over
// the config file.
struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> train_limit;
  std::optional<std::size_t> test_limit;
  std::optional<std::string> regime;
  std::vector<double> sigma_d;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<double> beta;
  std::optional<int> num_forwards;
  std::optional<double> delta_sigma;
  std::vector<std::uint64_t> seeds;
  std::vector<double> candidates;
  std::optional<std::string> kl_direction;
  std::string checkpoint;
  bool quiet = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "Experiment config (JSON) or a run manifest to replay")
      ->envname("OVFSIM_CONFIG");
  app->add_option("-o,--out", o.out, "Output directory")->envname("OVFSIM_OUT");
  app->add_option("--seed", o.seed, "Master seed")->envname("OVFSIM_SEED");
  app->add_option("--threads", o.threads, "Monte Carlo worker threads")->envname("OVFSIM_THREADS");
  app->add_option("--runs", o.runs, "Monte Carlo runs per evaluation")->envname("OVFSIM_RUNS");
  app->add_option("--train-limit", o.train_limit, "Use only the first n training samples");
  app->add_option("--test-limit", o.test_limit, "Use only the first n test samples");
  app->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
}

void add_training(CLI::App* app, Overrides& o) {
  app->add_option("--epochs", o.epochs, "Training epochs");
  app->add_option("--lr", o.lr, "Base learning rate");
  app->add_option("--batch-size", o.batch_size, "Mini-batch size");
  app->add_option("--beta", o.beta, "OVF negative constraint coefficient");
  app->add_option("--num-forwards", o.num_forwards, "OVF variational forwards N");
  app->add_option("--delta-sigma", o.delta_sigma, "OVF sigma increment");
}

ovfsim::ExperimentConfig resolve(const Overrides& o, const std::string& command) {
  ovfsim::ExperimentConfig c = o.config.empty() ? ovfsim::parse_config("{}") : ovfsim::load_config(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.eval.threads = *o.threads;
  if (o.runs) c.eval.runs = *o.runs;
  if (o.train_limit) c.dataset.train_limit = *o.train_limit;
  if (o.test_limit) c.dataset.test_limit = *o.test_limit;
  try {
    if (o.regime) c.train.regime = ovfsim::parse_regime(*o.regime);
    if (o.kl_direction) c.eval.kl_direction = ovfsim::parse_kl_direction(*o.kl_direction);
  } catch (const ovfsim::ValidationError& e) {
    throw ovfsim::UsageError(e.what());
  }
  if (!o.sigma_d.empty()) {
    if (command == "eval" || command == "sweep") {
      c.eval.sigma_grid = o.sigma_d;
    } else if (o.sigma_d.size() == 1) {
      c.train.device.sigma_d = o.sigma_d.front();
    } else {
      throw ovfsim::UsageError(command + ": --sigma-d takes a single value");
    }
  }
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.beta) c.ovf.beta = *o.beta;
  if (o.num_forwards) c.ovf.num_forwards = *o.num_forwards;
  if (o.delta_sigma) c.ovf.delta_sigma = *o.delta_sigma;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.candidates.empty()) c.beta_search.candidates = o.candidates;
  if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
  ovfsim::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ovfsim: device-variation-aware training and Monte Carlo evaluation for NVM crossbars"};
  app.set_version_flag("--version", std::string("ovfsim ") + ovfsim::kVersion + " (" + ovfsim::kGitRevision + ")");
  app.require_subcommand(1);
  app.footer(
      "Exit status: 0 success, 2 usage error, 1 runtime failure.\n"
      "Every experiment subcommand writes manifest.json next to its outputs; pass it back\n"
      "with --config (and a fresh --out) to reproduce the run.");

  Overrides o;
  auto* train = app.add_subcommand("train", "Train one regime; writes checkpoint.ovfc and metrics.csv");
  add_common(train, o);
  add_training(train, o);
  train->add_option("--regime", o.regime, "vanilla | noise_injection | ovf");
  train->add_option("--sigma-d", o.sigma_d, "Training device variation")->expected(1);

  auto* eval = app.add_subcommand("eval", "Monte Carlo accuracy and EKL of a checkpoint; writes eval.csv");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--sigma-d", o.sigma_d, "Evaluation sigma_d grid (one or more values)");
  eval->add_option("--kl-direction", o.kl_direction, "label_to_output | output_to_label");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate all regimes over the sigma_d grid; writes sweep.csv");
  add_common(sweep, o);
  add_training(sweep, o);
  sweep->add_option("--sigma-d", o.sigma_d, "sigma_d grid");
  sweep->add_option("--seeds", o.seeds, "Training seeds");

  auto* beta = app.add_subcommand("beta-search", "Select beta from the candidate grid on held-out data");
  add_common(beta, o);
  add_training(beta, o);
  beta->add_option("--sigma-d", o.sigma_d, "Training device variation")->expected(1);
  beta->add_option("--candidates", o.candidates, "beta candidates");

  std::vector<std::string> csv_files;
  auto* report = app.add_subcommand("report", "Render report CSVs as a plain-text table");
  report->add_option("csv", csv_files, "Report CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  std::ostream null_stream(nullptr);
  ovfsim::tune_allocator();
  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> files(csv_files.begin(), csv_files.end());
      std::cout << ovfsim::run_report(files);
      return 0;
    }
    std::ostream& log = o.quiet ? null_stream : std::cout;
    if (train->parsed()) {
      const auto c = resolve(o, "train");
      const auto out = ovfsim::run_train(c, log);
      log << "wrote " << out.checkpoint.string() << '\n';
      return out.result.converged ? 0 : kExitRuntime;
    }
    if (eval->parsed()) {
      ovfsim::run_eval(resolve(o, "eval"), log);
      return 0;
    }
    if (sweep->parsed()) {
      ovfsim::run_sweep(resolve(o, "sweep"), log);
      return 0;
    }
    if (beta->parsed()) {
      // The candidate table is the result, so it is printed even with --quiet.
      ovfsim::run_beta_search(resolve(o, "beta-search"), std::cout);
      return 0;
    }
  } catch (const ovfsim::UsageError& e) {
    std::cerr << "ovfsim: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "ovfsim: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
