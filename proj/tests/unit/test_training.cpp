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

#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "ovfsim/dataset.hpp"
#include "ovfsim/error.hpp"
#include "ovfsim/models.hpp"
#include "ovfsim/training.hpp"
#include "support/gradcheck.hpp"

using namespace ovfsim;

namespace {

ModelSpec tiny_cnn() {
  ModelSpec spec = ModelSpec::small_cnn(4, {1, 10, 10});
  spec.conv_channels = {3, 4};
  return spec;
}

Dataset tiny_data(std::size_t per_class = 40, std::uint64_t seed = 1) {
  SyntheticDatasetSpec s;
  s.num_classes = 4;
  s.samples_per_class = per_class;
  s.input_dim = 100;
  s.image_side = 10;
  s.separation = 2.0;
  return make_synthetic(s, seed);
}

Batch first_batch(const Dataset& d, std::size_t n) {
  Dataset h = d.head(n);
  return Batch{std::move(h.inputs), std::move(h.labels)};
}

TrainConfig noisy_config(Regime regime, double sigma) {
  TrainConfig c;
  c.regime = regime;
  c.device.sigma_d = sigma;
  if (regime == Regime::kOvf) c.ovf = OvfConfig{};
  return c;
}

std::vector<std::vector<Real>> grads(const ParamSet& p) {
  std::vector<std::vector<Real>> out;
  for (const auto& e : p) {
    const auto g = e.tensor.grad();
    out.emplace_back(g.begin(), g.end());
  }
  return out;
}

Dataset mnist_train() {
  const std::string dir = OVFSIM_DATA_DIR;
  return load_mnist_idx(dir + "/mnist10k-train-images-idx3-ubyte.gz", dir + "/mnist10k-train-labels-idx1-ubyte.gz");
}

Dataset mnist_test() {
  const std::string dir = OVFSIM_DATA_DIR;
  return load_mnist_idx(dir + "/mnist10k-test-images-idx3-ubyte.gz", dir + "/mnist10k-test-labels-idx1-ubyte.gz");
}

}  // namespace

TEST_SUITE("ovf coefficients") {
  TEST_CASE("decay factors") {
    const auto g = decay_factors(3);
    REQUIRE(g.size() == 3);
    CHECK(g[0] == doctest::Approx(0.01));
    CHECK(g[1] == doctest::Approx(0.1));
    CHECK(g[2] == 1.0);
    CHECK(decay_factors(1) == std::vector<double>{1.0});
    CHECK_THROWS_AS(decay_factors(0), ValidationError);
  }

  TEST_CASE("default combination for N = 3") {
    OvfConfig c;
    c.beta = 0.1;
    const auto k = combination_coefficients(c);
    REQUIRE(k.size() == 4);
    CHECK(k[0] == 0.25);
    CHECK(k[1] == doctest::Approx(-0.25 * 0.1 * 0.01));
    CHECK(k[2] == doctest::Approx(-0.25 * 0.1 * 0.1));
    CHECK(k[3] == doctest::Approx(-0.25 * 0.1 * 1.0));
  }

  TEST_CASE("signs and ordering hold for any positive beta") {
    for (int n : {1, 2, 3, 5}) {
      for (double beta : kBetaCandidates) {
        OvfConfig c;
        c.num_forwards = n;
        c.beta = beta;
        const auto k = combination_coefficients(c);
        CHECK(k[0] > 0);
        for (std::size_t i = 1; i < k.size(); ++i) {
          CHECK(k[i] < 0);
          if (i > 1) CHECK(std::abs(k[i]) > std::abs(k[i - 1]));
        }
      }
    }
  }

  TEST_CASE("explicit contribution factors") {
    OvfConfig c;
    c.a_b = 1.0;
    c.a_f = 0.5;
    c.beta = 0.2;
    const auto k = combination_coefficients(c);
    CHECK(k[0] == 1.0);
    CHECK(k[3] == doctest::Approx(-0.1));
  }
}

TEST_SUITE("sigma schedule") {
  TEST_CASE("increment") {
    const auto s = sigma_schedule(OvfConfig{}, 0.1);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == doctest::Approx(0.15));
    CHECK(s[1] == doctest::Approx(0.20));
    CHECK(s[2] == doctest::Approx(0.25));
  }

  TEST_CASE("increment from zero with one forward") {
    OvfConfig c;
    c.num_forwards = 1;
    CHECK(sigma_schedule(c, 0.0) == std::vector<double>{0.05});
  }

  TEST_CASE("increment clips at an explicit end") {
    OvfConfig c;
    c.end = 0.2;
    const auto s = sigma_schedule(c, 0.1);
    CHECK(s[0] == doctest::Approx(0.15));
    CHECK(s[1] == doctest::Approx(0.2));
    CHECK(s[2] == doctest::Approx(0.2));
  }

  TEST_CASE("linspace") {
    OvfConfig c;
    c.schedule = ScheduleMode::kLinspace;
    c.num_forwards = 4;
    c.end = 0.4;
    const auto s = sigma_schedule(c, 0.3);
    REQUIRE(s.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.1 * static_cast<double>(i + 1)));
    CHECK(s[3] == 0.4);
  }

  TEST_CASE("linspace defaults end to twice sigma_d") {
    OvfConfig c;
    c.schedule = ScheduleMode::kLinspace;
    const auto s = sigma_schedule(c, 0.15);
    CHECK(s.back() == doctest::Approx(0.3));
    CHECK_THROWS_AS(sigma_schedule(c, 0.0), ValidationError);
  }

  TEST_CASE("invalid settings") {
    OvfConfig c;
    c.num_forwards = 0;
    CHECK_THROWS_AS(sigma_schedule(c, 0.1), ValidationError);
    CHECK_THROWS_AS(sigma_schedule(OvfConfig{}, -0.1), ValidationError);
    OvfConfig d;
    d.beta = -1;
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("ovf settings are present exactly for the ovf regime") {
    TrainConfig c = noisy_config(Regime::kOvf, 0.1);
    CHECK_NOTHROW(validate(c));
    c.ovf.reset();
    CHECK_THROWS_AS(validate(c), ValidationError);
    TrainConfig v;
    v.ovf = OvfConfig{};
    CHECK_THROWS_AS(validate(v), ValidationError);
  }

  TEST_CASE("learning rate compensation and step decay") {
    TrainConfig c = noisy_config(Regime::kOvf, 0.1);
    c.learning_rate = 0.01;
    CHECK(effective_learning_rate(c, 0) == 0.01);
    c.ovf->compensate_lr = true;
    CHECK(effective_learning_rate(c, 0) == doctest::Approx(0.04));
    c.ovf->compensate_lr = false;
    c.lr_step_epochs = 2;
    CHECK(effective_learning_rate(c, 1) == 0.01);
    CHECK(effective_learning_rate(c, 2) == doctest::Approx(0.001));
  }

  TEST_CASE("enum names round trip") {
    for (Regime r : {Regime::kVanilla, Regime::kNoiseInjection, Regime::kOvf}) CHECK(parse_regime(to_string(r)) == r);
    for (ScheduleMode m : {ScheduleMode::kIncrement, ScheduleMode::kLinspace}) CHECK(parse_schedule_mode(to_string(m)) == m);
    for (CombineSpace m : {CombineSpace::kLogits, CombineSpace::kProbabilities}) CHECK(parse_combine_space(to_string(m)) == m);
    for (NoiseSharing m : {NoiseSharing::kIndependent, NoiseSharing::kShared}) CHECK(parse_noise_sharing(to_string(m)) == m);
    for (NoiseSpace m : {NoiseSpace::kDeviceModel, NoiseSpace::kWeightGaussian}) CHECK(parse_noise_space(to_string(m)) == m);
    CHECK_THROWS_AS(parse_regime("sgd"), ValidationError);
  }
}

TEST_SUITE("noise sources") {
  TEST_CASE("pinned noise replays the recorded offsets") {
    const Tensor w = testing::random_tensor({4, 3}, 2);
    DeviceConfig d;
    PinnedNoise pinned(std::make_unique<DeviceNoise>(d, NoiseSpace::kDeviceModel, NoiseSharing::kIndependent, 5));
    pinned.begin_step();
    const Tensor first = pinned.apply("fc.weight", w, 0.2);
    pinned.begin_step();
    CHECK(pinned.apply("fc.weight", w, 0.2) == first);
    CHECK(pinned.recorded() == 1);
    pinned.begin_step();
    CHECK_THROWS_AS(pinned.apply("fc.weight", Tensor({2}), 0.2), ContractError);
  }

  TEST_CASE("shared noise scales one realization with sigma") {
    const Tensor w = testing::random_tensor({20}, 3);
    DeviceConfig d;
    const Tensor wd = desired_weights(quantize(w, d));
    DeviceNoise noise(d, NoiseSpace::kDeviceModel, NoiseSharing::kShared, 6);
    noise.begin_step();
    const Tensor a = noise.apply("w", w, 0.1);
    const Tensor b = noise.apply("w", w, 0.3);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(b[i] - wd[i] == doctest::Approx(3 * (a[i] - wd[i])));
    noise.begin_step();
    CHECK_FALSE(noise.apply("w", w, 0.1) == a);
  }

  TEST_CASE("weight-space gaussian ablation") {
    const Tensor w({50000}, 0.5);
    DeviceNoise noise(DeviceConfig{}, NoiseSpace::kWeightGaussian, NoiseSharing::kIndependent, 7);
    const Tensor out = noise.apply("w", w, 0.2);
    double sum2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) sum2 += (out[i] - 0.5) * (out[i] - 0.5);
    CHECK(std::sqrt(sum2 / 50000) == doctest::Approx(0.1).epsilon(0.02));
  }
}

TEST_SUITE("steps") {
  TEST_CASE("beta = 0 with a_b = 1 reproduces noise-injection gradients") {
    const Dataset data = tiny_data();
    const Batch batch = first_batch(data, 16);
    Rng rng(3);
    ParamSet p = build(tiny_cnn(), rng);
    PinnedNoise pinned(std::make_unique<DeviceNoise>(DeviceConfig{}, NoiseSpace::kDeviceModel,
                                                     NoiseSharing::kIndependent, 9));
    const TrainConfig ni = noisy_config(Regime::kNoiseInjection, 0.2);
    noise_injection_gradients(p, tiny_cnn(), batch, ni, pinned);
    const auto want = grads(p);

    TrainConfig ovf = noisy_config(Regime::kOvf, 0.2);
    ovf.ovf->beta = 0.0;
    ovf.ovf->a_b = 1.0;
    ovf_gradients(p, tiny_cnn(), batch, ovf, pinned);
    const auto got = grads(p);
    double worst = 0;
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = 0; j < got[i].size(); ++j) worst = std::max(worst, std::abs(got[i][j] - want[i][j]));
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("all forwards of a step read the same clean parameters") {
    const Dataset data = tiny_data();
    Rng rng(4);
    ParamSet p = build(tiny_cnn(), rng);
    const auto before = p.fingerprint();
    DeviceNoise noise(DeviceConfig{}, NoiseSpace::kDeviceModel, NoiseSharing::kIndependent, 1);
    const auto r = ovf_gradients(p, tiny_cnn(), first_batch(data, 8), noisy_config(Regime::kOvf, 0.2), noise);
    REQUIRE(r.param_fingerprints.size() == 4);
    for (auto f : r.param_fingerprints) CHECK(f == before);
    CHECK(p.fingerprint() == before);
  }

  TEST_CASE("composite loss gradient with pinned noise") {
    const Dataset data = tiny_data();
    const Batch batch = first_batch(data, 6);
    Rng rng(5);
    ParamSet p = build(tiny_cnn(), rng);
    TrainConfig cfg = noisy_config(Regime::kOvf, 0.2);
    cfg.ovf->beta = 0.1;
    PinnedNoise pinned(std::make_unique<DeviceNoise>(DeviceConfig{}, NoiseSpace::kDeviceModel,
                                                     NoiseSharing::kIndependent, 10));
    const double loss0 = ovf_gradients(p, tiny_cnn(), batch, cfg, pinned).loss;
    const auto analytic = grads(p);
    std::vector<Tensor*> inputs;
    for (auto& e : p) inputs.push_back(&e.tensor);
    // The noise offsets are frozen, so the loss is a smooth function of the clean weights.
    const auto r = testing::compare_with_central_differences(
        inputs, [&] { return ovf_gradients(p, tiny_cnn(), batch, cfg, pinned).loss; }, analytic);
    CHECK(std::isfinite(loss0));
    CHECK(r.rel_error < 1e-3);
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    const Dataset data = tiny_data();
    Rng rng(6);
    ParamSet p = build(tiny_cnn(), rng);
    const ParamSet before = p;
    Sgd sgd;
    vanilla_step(p, tiny_cnn(), first_batch(data, 8), TrainConfig{}, sgd, 0.0);
    CHECK(p == before);
  }

  TEST_CASE("sgd with momentum") {
    ParamSet p;
    p.add("w.weight", Tensor({1}, 1.0));
    Sgd sgd(0.9);
    for (int i = 0; i < 2; ++i) {
      p.zero_grad();
      p.at("w.weight").grad()[0] = 1.0;
      sgd.step(p, 0.1);
    }
    // v1 = 1, v2 = 1.9
    CHECK(p.at("w.weight")[0] == doctest::Approx(1.0 - 0.1 - 0.19));
  }
}

TEST_SUITE("training runs") {
  TEST_CASE("runs are reproducible") {
    const Dataset data = tiny_data();
    TrainConfig c = noisy_config(Regime::kOvf, 0.2);
    c.epochs = 1;
    c.seed = 3;
    const TrainResult a = train(tiny_cnn(), data, nullptr, c);
    const TrainResult b = train(tiny_cnn(), data, nullptr, c);
    CHECK(a.params == b.params);
    c.seed = 4;
    CHECK_FALSE(train(tiny_cnn(), data, nullptr, c).params == a.params);
  }

  TEST_CASE("noise injection at zero sigma follows the vanilla trajectory") {
    const Dataset data = tiny_data();
    TrainConfig v;
    v.epochs = 1;
    v.seed = 8;
    TrainConfig ni = v;
    ni.regime = Regime::kNoiseInjection;
    CHECK(train(tiny_cnn(), data, nullptr, v).params == train(tiny_cnn(), data, nullptr, ni).params);
  }

  TEST_CASE("divergence is reported, not thrown") {
    const Dataset data = tiny_data();
    TrainConfig c;
    c.epochs = 3;
    c.learning_rate = 1e4;
    c.divergence_patience = 3;
    const TrainResult r = train(tiny_cnn(), data, nullptr, c);
    CHECK_FALSE(r.converged);
    CHECK_FALSE(r.diagnostic.empty());
  }

  TEST_CASE("class count mismatch") {
    TrainConfig c;
    CHECK_THROWS_AS(train(ModelSpec::small_cnn(10, {1, 10, 10}), tiny_data(), nullptr, c), ValidationError);
  }

  TEST_CASE("MLP on the MNIST subset reaches 95% clean accuracy in 5 epochs") {
    const Dataset train_set = mnist_train();
    const Dataset test_set = mnist_test();
    TrainConfig c;
    c.epochs = 5;
    c.seed = 1;
    c.learning_rate = 0.05;
    c.lr_step_epochs = 3;
    c.lr_decay = 0.2;
    const TrainResult r = train(ModelSpec::mlp({784, 256, 10}), train_set, &test_set, c);
    REQUIRE(r.converged);
    REQUIRE(r.epochs.size() == 5);
    MESSAGE("clean test accuracy " << *r.epochs.back().val_accuracy);
    CHECK(*r.epochs.back().val_accuracy >= 0.95);
  }

  TEST_CASE("noise-injection loss falls during the first epoch on MNIST") {
    const Dataset data = mnist_train().head(3200);
    const ModelSpec spec = ModelSpec::mlp({784, 128, 10});
    const TrainConfig c = noisy_config(Regime::kNoiseInjection, 0.1);
    Rng rng(2);
    ParamSet p = build(spec, rng);
    DeviceNoise noise(c.device, NoiseSpace::kDeviceModel, NoiseSharing::kIndependent, 3);
    Sgd sgd;
    std::vector<double> losses;
    for (std::size_t start = 0; start < data.size(); start += 32) {
      std::vector<std::size_t> idx(32);
      std::iota(idx.begin(), idx.end(), start);
      Dataset b = data.gather(idx);
      losses.push_back(noise_injection_step(p, spec, Batch{b.inputs, b.labels}, c, noise, sgd, 0.01).loss);
    }
    const auto avg = [&](std::size_t from) {
      return std::accumulate(losses.begin() + static_cast<long>(from), losses.begin() + static_cast<long>(from + 20), 0.0) / 20;
    };
    CHECK(avg(losses.size() - 20) < 0.5 * avg(0));
  }
}

TEST_SUITE("beta search") {
  TEST_CASE("single candidate is returned unconditionally") {
    const double one[] = {0.5};
    const auto r = beta_search(one, [](double) { return BetaCandidate{0, false, 0, "diverged"}; });
    CHECK(r.best_beta == 0.5);
  }

  TEST_CASE("one evaluation per candidate, argmax wins") {
    int calls = 0;
    const auto r = beta_search(kBetaCandidates, [&](double beta) {
      ++calls;
      return BetaCandidate{beta, true, beta == 1e-3 ? 0.9 : 0.5, ""};
    });
    CHECK(calls == 4);
    CHECK(r.best_beta == 1e-3);
    REQUIRE(r.candidates.size() == 4);
    CHECK(r.candidates[0].beta == 1e-1);
  }

  TEST_CASE("ties go to the smaller beta and diverged runs are skipped") {
    const auto r = beta_search(kBetaCandidates, [](double beta) {
      if (beta == 1e-4) return BetaCandidate{beta, false, 0.99, "nan"};
      return BetaCandidate{beta, true, 0.8, ""};
    });
    CHECK(r.best_beta == 1e-3);
  }

  TEST_CASE("every candidate diverged") {
    CHECK_THROWS_AS(beta_search(kBetaCandidates, [](double b) { return BetaCandidate{b, false, 0, "nan"}; }), Error);
    CHECK_THROWS_AS(beta_search(std::span<const double>{}, [](double b) { return BetaCandidate{b, true, 0, ""}; }),
                    ValidationError);
  }
}
