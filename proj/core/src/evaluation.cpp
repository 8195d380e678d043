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

#include "ovfsim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include "ovfsim/autodiff.hpp"
#include "ovfsim/error.hpp"
#include "ovfsim/rng.hpp"

namespace ovfsim {

std::string_view to_string(KlDirection d) {
  return d == KlDirection::kLabelToOutput ? "label_to_output" : "output_to_label";
}

KlDirection parse_kl_direction(std::string_view text) {
  if (text == "label_to_output") return KlDirection::kLabelToOutput;
  if (text == "output_to_label") return KlDirection::kOutputToLabel;
  throw ValidationError("unknown KL direction '" + std::string(text) + "'");
}

double kl_divergence(std::span<const Real> logits, std::size_t label, KlDirection direction) {
  if (label >= logits.size()) throw ValidationError("kl_divergence: label out of range");
  if (direction == KlDirection::kLabelToOutput) return -log_softmax_at(logits, label);
  // sum_j p_j log(p_j / onehot_j): any mass off the label makes it infinite.
  double kl = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double log_p = log_softmax_at(logits, j);
    const double p = std::exp(log_p);
    if (j == label) {
      kl += p * log_p;
    } else if (p > 0.0) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return kl;
}

std::size_t EklAccumulator::add(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("EklAccumulator: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = logits.data().subspan(r * k, k);
    const auto label = static_cast<std::size_t>(labels[r]);
    if (argmax(row) != label) continue;
    ++correct;
    sum_ += kl_divergence(row, label, direction_);
  }
  count_ += correct;
  return correct;
}

void EklAccumulator::merge(const EklAccumulator& other) {
  sum_ += other.sum_;
  count_ += other.count_;
}

std::optional<double> EklAccumulator::mean() const {
  if (count_ == 0) return std::nullopt;
  return sum_ / static_cast<double>(count_);
}

EvalReport summarize_runs(std::vector<double> accuracies, double sigma_d) {
  EvalReport report;
  report.sigma_d = sigma_d;
  report.runs = accuracies.size();
  if (accuracies.empty()) return report;
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  const double n = static_cast<double>(accuracies.size());
  report.mean_accuracy = sum / n;
  if (accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - report.mean_accuracy) * (a - report.mean_accuracy);
    report.std_accuracy = std::sqrt(ss / (n - 1.0));
    report.ci95_halfwidth = 1.96 * report.std_accuracy / std::sqrt(n);
    report.ci_defined = true;
  }
  report.per_run_accuracies = std::move(accuracies);
  return report;
}

namespace {

struct RunOutcome {
  double accuracy = 0.0;
  EklAccumulator ekl;
};

std::vector<RunOutcome> run_chips(const ParamSet& params, const ModelSpec& spec, const Dataset& data,
                                  const DeviceConfig& device, const EvalOptions& options) {
  validate(device);
  if (options.runs == 0) throw ValidationError("monte_carlo_eval: runs must be >= 1");
  if (data.size() == 0) throw ValidationError("monte_carlo_eval: empty dataset");

  // Zero variation is the clean network, as in training; no quantization.
  const bool clean = device.sigma_d == 0.0;
  std::map<std::string, QuantizedLayer, std::less<>> layers;
  for (const auto& e : params) {
    if (!clean && is_weight(e.name)) layers.emplace(e.name, quantize(e.tensor, device));
  }

  std::vector<RunOutcome> out(options.runs, RunOutcome{0.0, EklAccumulator(options.kl_direction)});
  auto one_run = [&](std::size_t run) {
    Rng rng(options.seed, {run});
    ParamSet chip;
    for (const auto& e : params) {
      chip.add(e.name, !clean && is_weight(e.name) ? perturb(layers.at(e.name), device, rng) : e.tensor);
    }
    const Tensor logits = predict_logits(chip, spec, data.inputs, {}, options.chunk);
    const std::size_t correct = out[run].ekl.add(logits, data.labels);
    out[run].accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  };

  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, options.runs);
  if (threads == 1) {
    for (std::size_t r = 0; r < options.runs; ++r) one_run(r);
    return out;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t r = t; r < options.runs; r += threads) one_run(r);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

EvalReport monte_carlo_eval(const ParamSet& params, const ModelSpec& spec, const Dataset& data,
                            const DeviceConfig& device, const EvalOptions& options) {
  const auto outcomes = run_chips(params, spec, data, device, options);
  std::vector<double> acc;
  EklAccumulator pooled(options.kl_direction);
  for (const auto& o : outcomes) {
    acc.push_back(o.accuracy);
    pooled.merge(o.ekl);
  }
  EvalReport report = summarize_runs(std::move(acc), device.sigma_d);
  report.mean_ekl = pooled.mean();
  report.correct_predictions = pooled.count();
  return report;
}

EklResult ekl_divergence(const ParamSet& params, const ModelSpec& spec, const Dataset& data,
                         const DeviceConfig& device, const EvalOptions& options) {
  const auto outcomes = run_chips(params, spec, data, device, options);
  EklAccumulator pooled(options.kl_direction);
  for (const auto& o : outcomes) pooled.merge(o.ekl);
  return {pooled.mean(), pooled.count()};
}

ConvergenceStats convergence_stats(std::span<const double> accuracies, double threshold) {
  if (accuracies.size() < 2) {
    throw ValidationError("convergence_stats: need at least two runs to form a reference mean");
  }
  ConvergenceStats stats;
  stats.threshold = threshold;
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  stats.mean = sum / static_cast<double>(accuracies.size());
  for (std::size_t i = 0; i < accuracies.size(); ++i) {
    if (accuracies[i] < stats.mean - threshold) stats.indices.push_back(i);
  }
  stats.nonconverged = stats.indices.size();
  return stats;
}

}  // namespace ovfsim
