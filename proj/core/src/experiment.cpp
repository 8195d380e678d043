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

#include "ovfsim/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "ovfsim/checkpoint.hpp"
#include "ovfsim/error.hpp"
#include "ovfsim/version.hpp"

namespace ovfsim {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kEvalStream = 0xe7a1;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

std::string metadata(Regime regime, const TrainConfig& t, const TrainResult& r, double test_accuracy) {
  ordered_json j;
  j["regime"] = to_string(regime);
  j["sigma_d"] = t.device.sigma_d;
  j["seed"] = t.seed;
  j["epochs"] = t.epochs;
  j["converged"] = r.converged;
  j["diagnostic"] = r.diagnostic;
  j["iterations"] = r.iterations;
  j["clean_test_accuracy"] = test_accuracy;
  if (t.ovf) j["beta"] = t.ovf->beta;
  return j.dump();
}

std::string sigma_tag(double sigma) { return format_number(sigma); }

EvalReport pool(const std::vector<EvalReport>& reports, double sigma_d) {
  std::vector<double> runs;
  double ekl_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& r : reports) {
    runs.insert(runs.end(), r.per_run_accuracies.begin(), r.per_run_accuracies.end());
    if (r.mean_ekl) ekl_sum += *r.mean_ekl * static_cast<double>(r.correct_predictions);
    correct += r.correct_predictions;
  }
  EvalReport pooled = summarize_runs(std::move(runs), sigma_d);
  if (correct) pooled.mean_ekl = ekl_sum / static_cast<double>(correct);
  pooled.correct_predictions = correct;
  return pooled;
}

std::size_t count_nonconverged(const SweepCell& cell, double threshold) {
  std::vector<bool> flagged(cell.per_seed.size(), false);
  for (std::size_t i = 0; i < flagged.size(); ++i) flagged[i] = !cell.trained_converged[i];
  if (cell.per_seed.size() >= 2) {
    std::vector<double> means;
    for (const auto& r : cell.per_seed) means.push_back(r.mean_accuracy);
    for (std::size_t i : convergence_stats(means, threshold).indices) flagged[i] = true;
  }
  return static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), true));
}

}  // namespace

std::uint64_t eval_seed(std::uint64_t train_seed) { return derive_seed(train_seed, {kEvalStream}); }

EvalOptions eval_options(const ExperimentConfig& config, std::uint64_t train_seed) {
  EvalOptions o;
  o.runs = config.eval.runs;
  o.seed = eval_seed(train_seed);
  o.kl_direction = config.eval.kl_direction;
  o.threads = config.eval.threads;
  o.chunk = config.eval.chunk;
  return o;
}

void write_manifest(const ExperimentConfig& config, std::string_view command,
                    const std::vector<std::string>& outputs) {
  ordered_json j;
  j["tool"] = "ovfsim";
  j["version"] = kVersion;
  j["git_revision"] = kGitRevision;
  j["command"] = command;
  j["seed"] = config.seed;
  j["config"] = ordered_json::parse(to_json(config));
  j["outputs"] = outputs;
  const fs::path path = config.output_dir / kManifestName;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// train

TrainOutputs run_train(const ExperimentConfig& config, std::ostream& log) {
  validate(config);
  ensure_dir(config.output_dir);
  const LoadedData data = load_data(config);
  const Regime regime = config.train.regime;
  const TrainConfig t = config.train_config(regime, config.train.device.sigma_d, config.seed);
  for (const auto& w : validate(t.device)) log << "warning: " << w << '\n';
  log << "training " << to_string(regime) << " at sigma_d=" << format_number(t.device.sigma_d) << " on "
      << data.train.size() << " samples" << std::endl;

  TrainOutputs out;
  out.result = train(config.model, data.train, &data.test, t);
  for (const auto& e : out.result.epochs) {
    log << "epoch " << e.epoch << "  lr " << format_number(e.learning_rate) << "  loss "
        << format_number(e.mean_loss) << "  train_acc " << format_number(e.train_accuracy) << "  test_acc "
        << format_number(e.val_accuracy.value_or(0.0)) << '\n';
  }
  if (!out.result.converged) log << "warning: run did not converge: " << out.result.diagnostic << '\n';

  const double test_acc = clean_accuracy(out.result.params, config.model, data.test);
  out.checkpoint = config.output_dir / "checkpoint.ovfc";
  out.metrics = config.output_dir / "metrics.csv";
  save_checkpoint(out.checkpoint, {config.model, out.result.params, metadata(regime, t, out.result, test_acc)});
  write_metrics_csv(out.metrics, out.result.epochs);
  write_manifest(config, "train", {"checkpoint.ovfc", "metrics.csv"});
  return out;
}

// ---------------------------------------------------------------------------
// eval

std::vector<ReportRow> run_eval(const ExperimentConfig& config, std::ostream& log) {
  validate(config);
  if (config.checkpoint.empty()) throw UsageError("eval: no checkpoint given");
  if (!fs::exists(config.checkpoint)) {
    throw UsageError("eval: no such checkpoint '" + config.checkpoint.string() + "'");
  }
  const Checkpoint ckpt = load_checkpoint(config.checkpoint);
  const auto meta = nlohmann::json::parse(ckpt.metadata_json, nullptr, false);
  std::string regime = "checkpoint";
  std::size_t nonconverged = 0;
  if (meta.is_object()) {
    regime = meta.value("regime", regime);
    nonconverged = meta.value("converged", true) ? 0 : 1;
  }
  ensure_dir(config.output_dir);
  const LoadedData data = load_data(config);
  if (data.test.num_classes != ckpt.spec.num_classes) {
    throw UsageError("eval: checkpoint has " + std::to_string(ckpt.spec.num_classes) +
                     " classes, dataset has " + std::to_string(data.test.num_classes));
  }

  std::vector<ReportRow> rows;
  for (double sigma : config.eval.sigma_grid) {
    DeviceConfig device = config.train.device;
    device.sigma_d = sigma;
    const EvalReport r = monte_carlo_eval(ckpt.params, ckpt.spec, data.test, device,
                                          eval_options(config, config.seed));
    rows.push_back(make_row(regime, r, nonconverged));
    log << "sigma_d " << format_number(sigma) << "  acc " << format_number(r.mean_accuracy) << " +/- "
        << format_number(r.ci95_halfwidth) << "  ekl "
        << (r.mean_ekl ? format_number(*r.mean_ekl) : std::string("undefined")) << std::endl;
  }
  write_report_csv(config.output_dir / "eval.csv", rows);
  write_manifest(config, "eval", {"eval.csv"});
  return rows;
}

// ---------------------------------------------------------------------------
// sweep

std::vector<SweepCell> sweep(const ExperimentConfig& config, const LoadedData& data,
                             const SweepOptions& options, std::ostream& log) {
  validate(config);
  if (!options.checkpoint_dir.empty()) ensure_dir(options.checkpoint_dir);
  const auto seeds = config.sweep_seeds();
  const auto& grid = config.eval.sigma_grid;

  std::vector<SweepCell> cells;
  for (Regime regime : options.regimes) {
    for (double sigma : grid) {
      SweepCell cell;
      cell.regime = regime;
      cell.sigma_d = sigma;
      cells.push_back(std::move(cell));
    }
  }
  auto cell_at = [&](Regime regime, std::size_t g) -> SweepCell& {
    const auto pos = std::find(options.regimes.begin(), options.regimes.end(), regime) - options.regimes.begin();
    return cells[static_cast<std::size_t>(pos) * grid.size() + g];
  };

  auto fit = [&](Regime regime, double sigma, std::uint64_t seed) {
    const TrainConfig t = config.train_config(regime, sigma, seed);
    TrainResult r = train(config.model, data.train, nullptr, t);
    if (!options.checkpoint_dir.empty()) {
      std::string name = std::string(to_string(regime));
      if (regime != Regime::kVanilla) name += "_sigma" + sigma_tag(sigma);
      name += "_seed" + std::to_string(seed) + ".ovfc";
      save_checkpoint(options.checkpoint_dir / name,
                      {config.model, r.params, metadata(regime, t, r, clean_accuracy(r.params, config.model, data.test))});
    }
    if (!r.converged) log << "  warning: " << r.diagnostic << '\n';
    return r;
  };
  auto evaluate = [&](SweepCell& cell, const TrainResult& r, std::uint64_t seed) {
    DeviceConfig device = config.train.device;
    device.sigma_d = cell.sigma_d;
    cell.per_seed.push_back(monte_carlo_eval(r.params, config.model, data.test, device,
                                             eval_options(config, seed)));
    cell.trained_converged.push_back(r.converged);
    const auto& e = cell.per_seed.back();
    log << "  " << to_string(cell.regime) << " sigma_d=" << sigma_tag(cell.sigma_d) << " seed=" << seed
        << "  acc " << format_number(e.mean_accuracy) << "  ekl "
        << (e.mean_ekl ? format_number(*e.mean_ekl) : std::string("undefined")) << std::endl;
  };

  for (std::uint64_t seed : seeds) {
    log << "seed " << seed << '\n';
    for (Regime regime : options.regimes) {
      if (regime == Regime::kVanilla) {
        const TrainResult r = fit(regime, 0.0, seed);
        for (std::size_t g = 0; g < grid.size(); ++g) evaluate(cell_at(regime, g), r, seed);
        continue;
      }
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const TrainResult r = fit(regime, grid[g], seed);
        evaluate(cell_at(regime, g), r, seed);
      }
    }
  }
  for (auto& cell : cells) {
    cell.pooled = pool(cell.per_seed, cell.sigma_d);
    cell.nonconverged = count_nonconverged(cell, config.eval.convergence_threshold);
  }
  return cells;
}

std::vector<ReportRow> run_sweep(const ExperimentConfig& config, std::ostream& log) {
  validate(config);
  ensure_dir(config.output_dir);
  const LoadedData data = load_data(config);
  SweepOptions options;
  options.checkpoint_dir = config.output_dir / "checkpoints";
  const auto cells = sweep(config, data, options, log);
  std::vector<ReportRow> rows;
  for (const auto& c : cells) rows.push_back(make_row(std::string(to_string(c.regime)), c.pooled, c.nonconverged));
  write_report_csv(config.output_dir / "sweep.csv", rows);
  write_manifest(config, "sweep", {"sweep.csv", "checkpoints/"});
  log << '\n' << render_table(rows);
  return rows;
}

// ---------------------------------------------------------------------------
// beta-search

BetaSearchResult run_beta_search(const ExperimentConfig& config, std::ostream& out) {
  validate(config);
  ensure_dir(config.output_dir);
  const LoadedData data = load_data(config);
  const std::size_t holdout = config.beta_search.validation_size;
  if (holdout == 0 || holdout >= data.train.size()) {
    throw UsageError("beta-search: validation_size must be in [1, " + std::to_string(data.train.size()) + ")");
  }
  const std::size_t keep = data.train.size() - holdout;
  std::vector<std::size_t> idx(data.train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Dataset fit_set = data.train.gather(std::span(idx).first(keep));
  const Dataset val_set = data.train.gather(std::span(idx).subspan(keep));
  const double sigma = config.train.device.sigma_d;

  EvalOptions options = eval_options(config, config.seed);
  options.runs = config.beta_search.runs;
  const BetaSearchResult result = beta_search(config.beta_search.candidates, [&](double beta) {
    ExperimentConfig c = config;
    c.ovf.beta = beta;
    const TrainConfig t = c.train_config(Regime::kOvf, sigma, config.seed);
    const TrainResult r = train(config.model, fit_set, nullptr, t);
    BetaCandidate cand;
    cand.beta = beta;
    cand.converged = r.converged;
    cand.diagnostic = r.diagnostic;
    if (r.converged) {
      cand.score = monte_carlo_eval(r.params, config.model, val_set, t.device, options).mean_accuracy;
    }
    return cand;
  });

  out << "beta      converged  val_mean_acc\n";
  std::ofstream csv(config.output_dir / "beta_search.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write beta_search.csv");
  csv << "beta,converged,mean_acc,selected\n";
  for (const auto& c : result.candidates) {
    const bool selected = c.beta == result.best_beta;
    std::string b = format_number(c.beta);
    b.resize(std::max<std::size_t>(b.size(), 10), ' ');
    out << b << (c.converged ? "yes        " : "no         ") << format_number(c.score)
        << (selected ? "  <- selected" : "") << '\n';
    csv << format_number(c.beta) << ',' << (c.converged ? 1 : 0) << ',' << format_number(c.score) << ','
        << (selected ? 1 : 0) << '\n';
  }
  out << "selected beta: " << format_number(result.best_beta) << '\n';
  write_manifest(config, "beta-search", {"beta_search.csv"});
  return result;
}

// ---------------------------------------------------------------------------
// report

std::string run_report(const std::vector<fs::path>& csv_files) {
  if (csv_files.empty()) throw UsageError("report: no CSV files given");
  std::vector<ReportRow> rows;
  for (const auto& f : csv_files) {
    if (!fs::exists(f)) throw UsageError("report: no such file '" + f.string() + "'");
    auto part = read_report_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return render_table(rows);
}

}  // namespace ovfsim
