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

#include "ovfsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ovfsim/error.hpp"

namespace ovfsim {

// ---------------------------------------------------------------------------
// Enum names

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::kVanilla: return "vanilla";
    case Regime::kNoiseInjection: return "noise_injection";
    case Regime::kOvf: return "ovf";
  }
  return "?";
}

Regime parse_regime(std::string_view text) {
  if (text == "vanilla") return Regime::kVanilla;
  if (text == "noise_injection" || text == "noise-injection") return Regime::kNoiseInjection;
  if (text == "ovf") return Regime::kOvf;
  throw ValidationError("unknown regime '" + std::string(text) + "'");
}

std::string_view to_string(ScheduleMode v) { return v == ScheduleMode::kIncrement ? "increment" : "linspace"; }
std::string_view to_string(CombineSpace v) { return v == CombineSpace::kLogits ? "logits" : "probabilities"; }
std::string_view to_string(NoiseSharing v) { return v == NoiseSharing::kIndependent ? "independent" : "shared"; }
std::string_view to_string(NoiseSpace v) { return v == NoiseSpace::kDeviceModel ? "device_model" : "weight_gaussian"; }

ScheduleMode parse_schedule_mode(std::string_view text) {
  if (text == "increment") return ScheduleMode::kIncrement;
  if (text == "linspace") return ScheduleMode::kLinspace;
  throw ValidationError("unknown schedule mode '" + std::string(text) + "'");
}
CombineSpace parse_combine_space(std::string_view text) {
  if (text == "logits") return CombineSpace::kLogits;
  if (text == "probabilities") return CombineSpace::kProbabilities;
  throw ValidationError("unknown combine space '" + std::string(text) + "'");
}
NoiseSharing parse_noise_sharing(std::string_view text) {
  if (text == "independent") return NoiseSharing::kIndependent;
  if (text == "shared") return NoiseSharing::kShared;
  throw ValidationError("unknown noise sharing '" + std::string(text) + "'");
}
NoiseSpace parse_noise_space(std::string_view text) {
  if (text == "device_model") return NoiseSpace::kDeviceModel;
  if (text == "weight_gaussian") return NoiseSpace::kWeightGaussian;
  throw ValidationError("unknown noise space '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// OVF coefficients and schedule

void validate(const OvfConfig& config) {
  if (config.num_forwards < 1) {
    throw ValidationError("ovf: num_forwards must be >= 1, got " + std::to_string(config.num_forwards));
  }
  if (!(config.beta >= 0.0) || !std::isfinite(config.beta)) throw ValidationError("ovf: beta must be finite and >= 0");
  if (!(config.delta_sigma > 0.0)) throw ValidationError("ovf: delta_sigma must be > 0");
  if (!(config.start >= 0.0)) throw ValidationError("ovf: start must be >= 0");
  if (config.end && !(*config.end > config.start)) throw ValidationError("ovf: end must exceed start");
  if (!(config.backbone_factor() > 0.0)) throw ValidationError("ovf: a_b must be > 0");
  if (!(config.constraint_factor() >= 0.0)) throw ValidationError("ovf: a_f must be >= 0");
  if (config.combine == CombineSpace::kProbabilities) {
    const auto c = combination_coefficients(config);
    if (!(std::accumulate(c.begin(), c.end(), 0.0) > 0.0)) {
      throw ValidationError("ovf: probability combination needs a_b > a_f * beta * sum(gamma)");
    }
  }
}

std::vector<double> decay_factors(int num_forwards) {
  if (num_forwards < 1) throw ValidationError("ovf: num_forwards must be >= 1");
  std::vector<double> gamma(static_cast<std::size_t>(num_forwards));
  for (int n = 1; n <= num_forwards; ++n) gamma[static_cast<std::size_t>(n - 1)] = std::pow(10.0, n - num_forwards);
  return gamma;
}

std::vector<double> combination_coefficients(const OvfConfig& config) {
  std::vector<double> coefs{config.backbone_factor()};
  for (double g : decay_factors(config.num_forwards)) {
    coefs.push_back(-config.constraint_factor() * config.beta * g);
  }
  return coefs;
}

std::vector<double> sigma_schedule(const OvfConfig& config, double sigma_d) {
  validate(config);
  if (!(sigma_d >= 0.0)) throw ValidationError("sigma_schedule: sigma_d must be >= 0");
  const auto n = static_cast<std::size_t>(config.num_forwards);
  std::vector<double> sigmas(n);
  if (config.schedule == ScheduleMode::kIncrement) {
    for (std::size_t i = 0; i < n; ++i) {
      sigmas[i] = sigma_d + static_cast<double>(i + 1) * config.delta_sigma;
      if (config.end) sigmas[i] = std::min(sigmas[i], *config.end);
    }
    return sigmas;
  }
  const double end = config.end.value_or(2.0 * sigma_d);
  if (!(end > config.start)) {
    throw ValidationError("sigma_schedule: linspace interval (start, end] is empty");
  }
  const double step = (end - config.start) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) sigmas[i] = config.start + static_cast<double>(i + 1) * step;
  sigmas.back() = end;
  return sigmas;
}

void validate(const TrainConfig& config) {
  validate(config.device);
  if (config.epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (config.batch_size == 0) throw ValidationError("train: batch_size must be > 0");
  if (!(config.learning_rate >= 0.0)) throw ValidationError("train: learning_rate must be >= 0");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw ValidationError("train: momentum must be in [0, 1)");
  if (config.lr_step_epochs < 0) throw ValidationError("train: lr_step_epochs must be >= 0");
  if ((config.regime == Regime::kOvf) != config.ovf.has_value()) {
    throw ValidationError("train: ovf settings must be present exactly when regime is ovf");
  }
  if (config.ovf) validate(*config.ovf);
}

// ---------------------------------------------------------------------------
// Noise sources

DeviceNoise::DeviceNoise(DeviceConfig device, NoiseSpace space, NoiseSharing sharing, std::uint64_t seed)
    : device_(device), space_(space), sharing_(sharing), rng_(seed) {
  validate(device_);
}

void DeviceNoise::begin_step() { shared_.clear(); }

std::vector<double> DeviceNoise::draw(std::size_t count) {
  std::vector<double> z(count);
  for (double& v : z) v = rng_.normal();
  return z;
}

Tensor DeviceNoise::apply(std::string_view name, const Tensor& weight, double sigma) {
  const std::size_t count = space_ == NoiseSpace::kDeviceModel
                                ? weight.size() * static_cast<std::size_t>(device_.devices_per_weight())
                                : weight.size();
  std::vector<double> z;
  if (sharing_ == NoiseSharing::kShared) {
    auto it = shared_.find(name);
    if (it == shared_.end()) it = shared_.emplace(std::string(name), draw(count)).first;
    z = it->second;
  } else {
    z = draw(count);
  }
  if (space_ == NoiseSpace::kDeviceModel) {
    DeviceConfig at = device_;
    at.sigma_d = sigma;
    return perturb(quantize(weight, at), at, z);
  }
  double max_abs = 0.0;
  for (Real w : weight.data()) max_abs = std::max(max_abs, std::abs(w));
  Tensor out(weight.shape(), std::vector<Real>(weight.data().begin(), weight.data().end()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * max_abs * z[i];
  return out;
}

Tensor PinnedNoise::apply(std::string_view name, const Tensor& weight, double sigma) {
  if (cursor_ == offsets_.size()) {
    const Tensor noisy = inner_->apply(name, weight, sigma);
    Tensor offset(weight.shape());
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = noisy[i] - weight[i];
    offsets_.push_back(std::move(offset));
  }
  const Tensor& offset = offsets_.at(cursor_++);
  if (offset.shape() != weight.shape()) {
    throw ContractError("PinnedNoise: replay shape mismatch for '" + std::string(name) + "'");
  }
  Tensor out = weight;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset[i];
  return out;
}

// ---------------------------------------------------------------------------
// Gradients

namespace {

// Zero noise means a clean forward: no quantization, no draws.
WeightTransform noisy(NoiseSource& noise, double sigma) {
  if (sigma == 0.0) return {};
  return [&noise, sigma](std::string_view name, const Tensor& w) { return noise.apply(name, w, sigma); };
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (argmax(logits.data().subspan(r * k, k)) == static_cast<std::size_t>(labels[r])) ++correct;
  }
  return correct;
}

StepResult finish(Graph& graph, Var loss, const Var& backbone, const Batch& batch, StepResult r) {
  r.loss = loss.value()[0];
  r.count = batch.labels.size();
  r.correct = count_correct(backbone.value(), batch.labels);
  if (!std::isfinite(r.loss)) return r;  // caller reports
  graph.backward(loss);
  return r;
}

std::string sigma_list(const std::vector<double>& sigmas) {
  std::ostringstream os;
  for (std::size_t i = 0; i < sigmas.size(); ++i) os << (i ? ", " : "") << sigmas[i];
  return os.str();
}

[[noreturn]] void throw_non_finite(const std::vector<double>& sigmas, std::size_t iteration) {
  throw NonFiniteLossError("non-finite training loss at iteration " + std::to_string(iteration) +
                           " (sigmas: " + sigma_list(sigmas) + ")");
}

}  // namespace

StepResult vanilla_gradients(ParamSet& params, const ModelSpec& spec, const Batch& batch) {
  params.zero_grad();
  Graph graph;
  StepResult r;
  r.param_fingerprints.push_back(params.fingerprint());
  const Var logits = forward(graph, params, spec, batch.inputs);
  const Var loss = softmax_cross_entropy(logits, batch.labels);
  return finish(graph, loss, logits, batch, std::move(r));
}

StepResult noise_injection_gradients(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                                     const TrainConfig& config, NoiseSource& noise) {
  params.zero_grad();
  noise.begin_step();
  Graph graph;
  StepResult r;
  r.param_fingerprints.push_back(params.fingerprint());
  const Var logits = forward(graph, params, spec, batch.inputs, noisy(noise, config.device.sigma_d));
  const Var loss = softmax_cross_entropy(logits, batch.labels);
  return finish(graph, loss, logits, batch, std::move(r));
}

StepResult ovf_gradients(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                         const TrainConfig& config, NoiseSource& noise) {
  if (!config.ovf) throw ValidationError("ovf_gradients: missing ovf settings");
  const OvfConfig& ovf = *config.ovf;
  const std::vector<double> sigmas = sigma_schedule(ovf, config.device.sigma_d);
  const std::vector<double> coefs = combination_coefficients(ovf);

  params.zero_grad();
  noise.begin_step();
  Graph graph;
  StepResult r;

  // All forwards read the same clean parameters; nothing is updated until
  // the single backward below has run.
  std::vector<std::pair<Real, Var>> terms;
  r.param_fingerprints.push_back(params.fingerprint());
  const Var backbone = forward(graph, params, spec, batch.inputs, noisy(noise, config.device.sigma_d));
  terms.emplace_back(coefs[0], backbone);
  for (std::size_t n = 0; n < sigmas.size(); ++n) {
    r.param_fingerprints.push_back(params.fingerprint());
    terms.emplace_back(coefs[n + 1], forward(graph, params, spec, batch.inputs, noisy(noise, sigmas[n])));
  }

  Var loss;
  if (ovf.combine == CombineSpace::kLogits) {
    loss = softmax_cross_entropy(linear_combination(terms), batch.labels);
  } else {
    for (auto& term : terms) term.second = softmax(term.second);
    const double normaliser = std::accumulate(coefs.begin(), coefs.end(), 0.0);
    loss = probability_nll(linear_combination(terms), batch.labels, normaliser);
  }
  return finish(graph, loss, backbone, batch, std::move(r));
}

// ---------------------------------------------------------------------------
// Updates

void Sgd::step(ParamSet& params, double learning_rate) {
  for (auto& e : params) {
    if (!e.tensor.has_grad()) continue;
    auto& v = velocity_[e.name];
    const auto g = std::as_const(e.tensor).grad();
    if (v.size() != g.size()) v.assign(g.size(), Real{0});
    auto w = e.tensor.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      w[i] -= learning_rate * v[i];
    }
  }
}

namespace {

std::vector<double> active_sigmas(const TrainConfig& config) {
  std::vector<double> s{config.device.sigma_d};
  if (config.regime == Regime::kVanilla) return {0.0};
  if (config.ovf) {
    const auto extra = sigma_schedule(*config.ovf, config.device.sigma_d);
    s.insert(s.end(), extra.begin(), extra.end());
  }
  return s;
}

}  // namespace

StepResult vanilla_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                        const TrainConfig& config, Sgd& sgd, double learning_rate) {
  StepResult r = vanilla_gradients(params, spec, batch);
  if (!std::isfinite(r.loss)) throw_non_finite(active_sigmas(config), 0);
  sgd.step(params, learning_rate);
  return r;
}

StepResult noise_injection_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                                const TrainConfig& config, NoiseSource& noise, Sgd& sgd,
                                double learning_rate, std::size_t iteration) {
  StepResult r = noise_injection_gradients(params, spec, batch, config, noise);
  if (!std::isfinite(r.loss)) throw_non_finite(active_sigmas(config), iteration);
  sgd.step(params, learning_rate);
  return r;
}

StepResult ovf_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                    const TrainConfig& config, NoiseSource& noise, Sgd& sgd, double learning_rate,
                    std::size_t iteration) {
  StepResult r = ovf_gradients(params, spec, batch, config, noise);
  if (!std::isfinite(r.loss)) throw_non_finite(active_sigmas(config), iteration);
  sgd.step(params, learning_rate);
  return r;
}

StepResult train_step(ParamSet& params, const ModelSpec& spec, const Batch& batch,
                      const TrainConfig& config, NoiseSource& noise, Sgd& sgd,
                      double learning_rate, std::size_t iteration) {
  switch (config.regime) {
    case Regime::kVanilla: {
      StepResult r = vanilla_gradients(params, spec, batch);
      if (!std::isfinite(r.loss)) throw_non_finite(active_sigmas(config), iteration);
      sgd.step(params, learning_rate);
      return r;
    }
    case Regime::kNoiseInjection:
      return noise_injection_step(params, spec, batch, config, noise, sgd, learning_rate, iteration);
    case Regime::kOvf:
      return ovf_step(params, spec, batch, config, noise, sgd, learning_rate, iteration);
  }
  throw ValidationError("train_step: unknown regime");
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

enum Stream : std::uint64_t { kInitStream = 1, kOrderStream = 2, kNoiseStream = 3 };

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

double effective_learning_rate(const TrainConfig& config, int epoch) {
  double lr = config.learning_rate;
  if (config.lr_step_epochs > 0) lr *= std::pow(config.lr_decay, epoch / config.lr_step_epochs);
  if (config.regime == Regime::kOvf && config.ovf && config.ovf->compensate_lr) {
    lr /= config.ovf->backbone_factor();
  }
  return lr;
}

double clean_accuracy(const ParamSet& params, const ModelSpec& spec, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const Tensor logits = predict_logits(params, spec, data.inputs);
  return static_cast<double>(count_correct(logits, data.labels)) / static_cast<double>(data.size());
}

TrainResult train(const ModelSpec& spec, const Dataset& train_set, const Dataset* val_set,
                  const TrainConfig& config) {
  validate(config);
  if (train_set.size() == 0) throw ValidationError("train: empty training set");
  if (train_set.num_classes != spec.num_classes) {
    throw ValidationError("train: dataset has " + std::to_string(train_set.num_classes) +
                          " classes, model expects " + std::to_string(spec.num_classes));
  }
  TrainResult result;
  Rng init_rng(config.seed, {kInitStream});
  result.params = build(spec, init_rng);
  Rng order_rng(config.seed, {kOrderStream});
  DeviceNoise noise(config.device, config.noise_space,
                    config.ovf ? config.ovf->sharing : NoiseSharing::kIndependent,
                    derive_seed(config.seed, {kNoiseStream}));
  Sgd sgd(config.momentum);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double initial_loss = -1.0;
  std::size_t above = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = effective_learning_rate(config, epoch);
    shuffle(order, order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      Dataset picked = train_set.gather(idx);
      const Batch batch{std::move(picked.inputs), std::move(picked.labels)};
      StepResult r;
      try {
        r = train_step(result.params, spec, batch, config, noise, sgd, lr, result.iterations);
      } catch (const NonFiniteLossError& e) {
        result.converged = false;
        result.diagnostic = e.what();
        return result;
      }
      ++result.iterations;
      if (initial_loss < 0.0) initial_loss = r.loss;
      above = r.loss > config.divergence_factor * initial_loss ? above + 1 : 0;
      if (config.divergence_patience > 0 && above >= config.divergence_patience) {
        result.converged = false;
        result.diagnostic = "loss above " + std::to_string(config.divergence_factor) +
                            "x initial for " + std::to_string(above) + " iterations (iteration " +
                            std::to_string(result.iterations) + ")";
        return result;
      }
      loss_sum += r.loss;
      correct += r.correct;
      seen += r.count;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.learning_rate = lr;
    m.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(seen, 1));
    if (val_set) m.val_accuracy = clean_accuracy(result.params, spec, *val_set);
    result.epochs.push_back(m);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Beta search

BetaSearchResult beta_search(std::span<const double> candidates, const BetaEvaluator& evaluate) {
  if (candidates.empty()) throw ValidationError("beta_search: no candidates");
  BetaSearchResult result;
  for (double beta : candidates) {
    BetaCandidate c = evaluate(beta);
    c.beta = beta;
    result.candidates.push_back(std::move(c));
  }
  if (result.candidates.size() == 1) {
    result.best_beta = result.candidates.front().beta;
    return result;
  }
  const BetaCandidate* best = nullptr;
  for (const auto& c : result.candidates) {
    if (!c.converged) continue;
    if (!best || c.score > best->score || (c.score == best->score && c.beta < best->beta)) best = &c;
  }
  if (!best) {
    std::ostringstream os;
    os << "beta_search: every candidate diverged:";
    for (const auto& c : result.candidates) os << "\n  beta=" << c.beta << ": " << c.diagnostic;
    throw Error(os.str());
  }
  result.best_beta = best->beta;
  return result;
}

}  // namespace ovfsim
