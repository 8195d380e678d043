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

// Training regimes: vanilla, Gaussian noise injection, and oriented
// variational forward (OVF) training.
//
// One OVF iteration runs a backbone forward under device noise at sigma_d plus
// N extra forwards from the same clean parameters under noise at increasing
// sigma_1 < ... < sigma_N, combines the logits as
//
//   O_total = a_b * O_backbone - a_f * beta * sum_n gamma_n * Out_n,
//   gamma_n = 10^(n - N),
//
// and back-propagates cross-entropy on O_total once, after all forwards.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovfsim/dataset.hpp"
#include "ovfsim/device_model.hpp"
#include "ovfsim/models.hpp"
#include "ovfsim/rng.hpp"

namespace ovfsim {

enum class Regime { kVanilla, kNoiseInjection, kOvf };
std::string_view to_string(Regime regime);
Regime parse_regime(std::string_view text);

/// How the constraint sigmas are laid out.
enum class ScheduleMode {
  /// sigma_n = sigma_d + n * delta_sigma (clipped to an explicit `end`).
  kIncrement,
  /// N evenly spaced values in (start, end].
  kLinspace,
};
/// Which outputs the OVF combination acts on.
enum class CombineSpace { kLogits, kProbabilities };
/// Whether the forwards of one step draw fresh noise or rescale a single
/// standard-normal realization.
enum class NoiseSharing { kIndependent, kShared };
/// Where training noise is drawn.
enum class NoiseSpace {
  /// quantize -> bit-slice -> perturb devices, straight-through gradient.
  kDeviceModel,
  /// dw ~ N(0, (sigma * max|W|)^2) added to the float weights.
  kWeightGaussian,
};

std::string_view to_string(ScheduleMode v);
std::string_view to_string(CombineSpace v);
std::string_view to_string(NoiseSharing v);
std::string_view to_string(NoiseSpace v);
ScheduleMode parse_schedule_mode(std::string_view text);
CombineSpace parse_combine_space(std::string_view text);
NoiseSharing parse_noise_sharing(std::string_view text);
NoiseSpace parse_noise_space(std::string_view text);

inline constexpr double kDefaultDeltaSigma = 0.05;
inline constexpr int kDefaultVariationalForwards = 3;

struct OvfConfig {
  int num_forwards = kDefaultVariationalForwards;  // N
  double beta = 1e-2;
  double start = 0.0;
  /// Defaults to 2 * sigma_d. Increment mode clips only against an explicit end.
  std::optional<double> end;
  double delta_sigma = kDefaultDeltaSigma;
  /// Contribution factors; default 1 / (N + 1) each.
  std::optional<double> a_b;
  std::optional<double> a_f;
  ScheduleMode schedule = ScheduleMode::kIncrement;
  CombineSpace combine = CombineSpace::kLogits;
  NoiseSharing sharing = NoiseSharing::kIndependent;
  /// Multiply the learning rate by 1 / a_b, so the backbone term trains at the
  /// baseline step size. Off by default: the combined logits are already about
  /// a_b * O_b, so the scaled step overshoots and tends to collapse at high sigma.
  bool compensate_lr = false;

  double backbone_factor() const { return a_b.value_or(1.0 / (num_forwards + 1)); }
  double constraint_factor() const { return a_f.value_or(1.0 / (num_forwards + 1)); }
};

/// Throws ValidationError (N < 1, beta < 0, non-positive factors, ...).
void validate(const OvfConfig& config);

/// gamma_n = 10^(n - N), n = 1..N.
std::vector<double> decay_factors(int num_forwards);
/// [a_b, -a_f * beta * gamma_1, ..., -a_f * beta * gamma_N].
std::vector<double> combination_coefficients(const OvfConfig& config);
/// Strictly increasing sigma_1..sigma_N for the constraint forwards.
std::vector<double> sigma_schedule(const OvfConfig& config, double sigma_d);

struct TrainConfig {
  Regime regime = Regime::kVanilla;
  int epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Step decay: multiply the rate by lr_decay every lr_step_epochs (0 = off).
  int lr_step_epochs = 0;
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  DeviceConfig device;
  NoiseSpace noise_space = NoiseSpace::kDeviceModel;
  /// Present iff regime == kOvf.
  std::optional<OvfConfig> ovf;
  /// Divergence guard: a run is abandoned as non-converged when the loss
  /// exceeds divergence_factor * initial loss for divergence_patience
  /// consecutive iterations.
  double divergence_factor = 10.0;
  std::size_t divergence_patience = 100;
};

void validate(const TrainConfig& config);

/// Source of the perturbed weights seen by training forwards.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  /// Called once at the top of every training iteration.
  virtual void begin_step() {}
  virtual Tensor apply(std::string_view name, const Tensor& weight, double sigma) = 0;
};

/// Fresh noise from a seeded stream, drawn through the device model or in
/// weight space.
class DeviceNoise : public NoiseSource {
 public:
  DeviceNoise(DeviceConfig device, NoiseSpace space, NoiseSharing sharing, std::uint64_t seed);

  void begin_step() override;
  Tensor apply(std::string_view name, const Tensor& weight, double sigma) override;

 private:
  std::vector<double> draw(std::size_t count);

  DeviceConfig device_;
  NoiseSpace space_;
  NoiseSharing sharing_;
  Rng rng_;
  std::map<std::string, std::vector<double>, std::less<>> shared_;
};

/// Records the offsets (perturbed - clean) produced by an inner source on
/// first use, then replays them. Replayed forwards are W + fixed offset, so
/// the composite loss becomes an ordinary differentiable function of W.
class PinnedNoise : public NoiseSource {
 public:
  explicit PinnedNoise(std::unique_ptr<NoiseSource> inner) : inner_(std::move(inner)) {}

  void begin_step() override { cursor_ = 0; }
  Tensor apply(std::string_view name, const Tensor& weight, double sigma) override;
  std::size_t recorded() const { return offsets_.size(); }

 private:
  std::unique_ptr<NoiseSource> inner_;
  std::vector<Tensor> offsets_;
  std::size_t cursor_ = 0;
};

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

struct StepResult {
  double loss = 0.0;
  /// Correct top-1 predictions of the backbone output alone.
  std::size_t correct = 0;
  std::size_t count = 0;
  /// Fingerprint of the clean parameters observed before each forward.
  std::vector<std::uint64_t> param_fingerprints;
};

/// Zeroes gradients, runs the regime's forwards, one backward. No update.
StepResult vanilla_gradients(ParamSet& params, const ModelSpec& spec, const Batch& batch);
StepResult noise_injection_gradients(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                                     const TrainConfig& config, NoiseSource& noise);
StepResult ovf_gradients(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                         const TrainConfig& config, NoiseSource& noise);

/// SGD with (heavy-ball) momentum: v = mu * v + g; w -= lr * v.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9) : momentum_(momentum) {}
  void step(ParamSet& params, double learning_rate);

 private:
  double momentum_;
  std::map<std::string, std::vector<Real>, std::less<>> velocity_;
};

/// Gradients followed by one optimizer update. Throws NonFiniteLossError
/// naming the sigmas in use and `iteration`.
StepResult vanilla_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                        const TrainConfig& config, Sgd& sgd, double learning_rate);
StepResult noise_injection_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                                const TrainConfig& config, NoiseSource& noise, Sgd& sgd,
                                double learning_rate, std::size_t iteration = 0);
StepResult ovf_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                    const TrainConfig& config, NoiseSource& noise, Sgd& sgd, double learning_rate,
                    std::size_t iteration = 0);

/// Dispatches on config.regime.
StepResult train_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                      const TrainConfig& config, NoiseSource& noise, Sgd& sgd,
                      double learning_rate, std::size_t iteration = 0);

struct EpochMetrics {
  int epoch = 0;
  double learning_rate = 0.0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  /// Clean accuracy on the validation set, if one was given.
  std::optional<double> val_accuracy;
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochMetrics> epochs;
  bool converged = true;
  std::string diagnostic;
  std::size_t iterations = 0;
};

/// Learning rate at `epoch` (0-based) after step decay and OVF compensation.
double effective_learning_rate(const TrainConfig& config, int epoch);

/// Full training run from a fresh seeded initialisation.
TrainResult train(const ModelSpec& spec, const Dataset& train_set, const Dataset* val_set,
                  const TrainConfig& config);

/// Clean top-1 accuracy.
double clean_accuracy(const ParamSet& params, const ModelSpec& spec, const Dataset& data);

inline constexpr double kBetaCandidates[] = {1e-1, 1e-2, 1e-3, 1e-4};

struct BetaCandidate {
  double beta = 0.0;
  bool converged = false;
  double score = 0.0;  // mean Monte Carlo accuracy
  std::string diagnostic;
};

struct BetaSearchResult {
  double best_beta = 0.0;
  std::vector<BetaCandidate> candidates;
};

/// Trains/evaluates one candidate and reports its outcome.
using BetaEvaluator = std::function<BetaCandidate(double beta)>;

/// Runs `evaluate` once per candidate, returns the highest-scoring converged
/// candidate; ties go to the smaller beta. A lone candidate is returned even
/// if it diverged. Otherwise throws Error listing every outcome when no
/// candidate converged.
BetaSearchResult beta_search(std::span<const double> candidates, const BetaEvaluator& evaluate);

}  // namespace ovfsim
