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
#include <limits>
#include <vector>

#include "ovfsim/dataset.hpp"
#include "ovfsim/error.hpp"
#include "ovfsim/evaluation.hpp"
#include "ovfsim/models.hpp"
#include "ovfsim/training.hpp"

using namespace ovfsim;

namespace {

SyntheticDatasetSpec blobs(std::size_t classes = 4) {
  SyntheticDatasetSpec s;
  s.num_classes = classes;
  s.samples_per_class = 30;
  s.input_dim = 16;
  s.separation = 3.0;
  return s;
}

// A small trained MLP on synthetic blobs, shared by several cases.
struct Trained {
  ModelSpec spec = ModelSpec::mlp({16, 12, 4}, {1, 1, 16});
  Dataset data = make_synthetic(blobs(), 3);
  ParamSet params;
  Trained() {
    TrainConfig c;
    c.epochs = 3;
    c.seed = 1;
    params = train(spec, data, nullptr, c).params;
  }
};

const Trained& trained() {
  static const Trained t;
  return t;
}

DeviceConfig at(double sigma) {
  DeviceConfig d;
  d.sigma_d = sigma;
  return d;
}

}  // namespace

TEST_SUITE("kl divergence") {
  TEST_CASE("one-hot output contributes zero in both directions") {
    const Real logits[] = {1000, 0, 0};
    CHECK(kl_divergence(logits, 0, KlDirection::kLabelToOutput) == 0.0);
    CHECK(kl_divergence(logits, 0, KlDirection::kOutputToLabel) == 0.0);
  }

  TEST_CASE("uniform output costs log C") {
    const Real logits[] = {2, 2, 2, 2, 2};
    CHECK(kl_divergence(logits, 3, KlDirection::kLabelToOutput) == doctest::Approx(std::log(5.0)));
    CHECK(kl_divergence(logits, 3, KlDirection::kOutputToLabel) == std::numeric_limits<double>::infinity());
  }

  TEST_CASE("shift invariance") {
    const Real a[] = {0.3, -1.2, 2.0}, b[] = {100.3, 98.8, 102.0};
    CHECK(kl_divergence(a, 2, KlDirection::kLabelToOutput) ==
          doctest::Approx(kl_divergence(b, 2, KlDirection::kLabelToOutput)).epsilon(1e-12));
  }

  TEST_CASE("direction names") {
    CHECK(parse_kl_direction("label_to_output") == KlDirection::kLabelToOutput);
    CHECK(parse_kl_direction(to_string(KlDirection::kOutputToLabel)) == KlDirection::kOutputToLabel);
    CHECK_THROWS_AS(parse_kl_direction("forward"), ValidationError);
  }
}

TEST_SUITE("ekl") {
  TEST_CASE("five-sample fixture pooled across two runs") {
    // Run 1: rows 0, 1 correct, row 2 wrong. Run 2: row 0 correct, row 1 wrong (tie goes to class 0).
    const Tensor run1({3, 2}, std::vector<Real>{2, 0, 0, 1, 3, 0});
    const int labels1[] = {0, 1, 1};
    const Tensor run2({2, 2}, std::vector<Real>{0.5, 0, 1, 1});
    const int labels2[] = {0, 1};
    EklAccumulator a, b;
    CHECK(a.add(run1, labels1) == 2);
    CHECK(b.add(run2, labels2) == 1);
    a.merge(b);
    const auto nll = [](double margin) { return std::log1p(std::exp(-margin)); };
    const double want = (nll(2) + nll(1) + nll(0.5)) / 3;
    REQUIRE(a.mean().has_value());
    CHECK(*a.mean() == doctest::Approx(want).epsilon(1e-14));
    CHECK(a.count() == 3);
  }

  TEST_CASE("no correct predictions leaves EKL undefined") {
    EklAccumulator a;
    const Tensor wrong({1, 2}, std::vector<Real>{0, 1});
    const int label[] = {0};
    a.add(wrong, label);
    CHECK_FALSE(a.mean().has_value());
  }

  TEST_CASE("end to end at zero noise matches the clean logits") {
    const auto& t = trained();
    const Tensor logits = predict_logits(t.params, t.spec, t.data.inputs);
    double sum = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const std::span<const Real> row(logits.data().data() + i * 4, 4);
      if (argmax(row) != static_cast<std::size_t>(t.data.labels[i])) continue;
      sum += -log_softmax_at(row, static_cast<std::size_t>(t.data.labels[i]));
      ++correct;
    }
    EvalOptions o;
    o.runs = 3;
    const EklResult r = ekl_divergence(t.params, t.spec, t.data, at(0.0), o);
    CHECK(r.correct_predictions == 3 * correct);
    REQUIRE(r.value.has_value());
    CHECK(*r.value == doctest::Approx(sum / static_cast<double>(correct)).epsilon(1e-12));
  }
}

TEST_SUITE("monte carlo") {
  TEST_CASE("zero sigma has no spread") {
    const auto& t = trained();
    EvalOptions o;
    o.runs = 5;
    const EvalReport r = monte_carlo_eval(t.params, t.spec, t.data, at(0.0), o);
    CHECK(r.std_accuracy == 0.0);
    CHECK(r.ci95_halfwidth == 0.0);
    CHECK(r.mean_accuracy == clean_accuracy(t.params, t.spec, t.data));
    CHECK(r.per_run_accuracies.size() == 5);
  }

  TEST_CASE("a constant classifier scores exactly one in ten") {
    const ModelSpec spec = ModelSpec::mlp({16, 8, 10}, {1, 1, 16});
    Rng rng(1);
    ParamSet p = build(spec, rng);
    for (auto& e : p) e.tensor = Tensor(e.tensor.shape());
    p.at("fc2.bias")[0] = 1.0;
    const Dataset data = make_synthetic(blobs(10), 4);
    for (double sigma : {0.0, 0.2, 0.4}) {
      EvalOptions o;
      o.runs = 4;
      CHECK(monte_carlo_eval(p, spec, data, at(sigma), o).mean_accuracy == 0.1);
    }
  }

  TEST_CASE("noise lowers accuracy and spreads runs") {
    const auto& t = trained();
    EvalOptions o;
    o.runs = 20;
    const EvalReport clean = monte_carlo_eval(t.params, t.spec, t.data, at(0.0), o);
    const EvalReport noisy = monte_carlo_eval(t.params, t.spec, t.data, at(0.4), o);
    CHECK(noisy.std_accuracy > 0.0);
    CHECK(noisy.mean_accuracy < clean.mean_accuracy);
    CHECK(noisy.ci_defined);
    CHECK(noisy.ci95_halfwidth == doctest::Approx(1.96 * noisy.std_accuracy / std::sqrt(20.0)));
  }

  TEST_CASE("results do not depend on the thread count or chunk size") {
    const auto& t = trained();
    EvalOptions o;
    o.runs = 7;
    o.seed = 42;
    const EvalReport one = monte_carlo_eval(t.params, t.spec, t.data, at(0.3), o);
    o.threads = 3;
    o.chunk = 17;
    const EvalReport three = monte_carlo_eval(t.params, t.spec, t.data, at(0.3), o);
    CHECK(one.per_run_accuracies == three.per_run_accuracies);
    CHECK(one.mean_ekl == three.mean_ekl);
    o.seed = 43;
    CHECK_FALSE(monte_carlo_eval(t.params, t.spec, t.data, at(0.3), o).per_run_accuracies ==
                one.per_run_accuracies);
  }

  TEST_CASE("summary statistics") {
    const EvalReport r = summarize_runs({0.5, 0.7, 0.6}, 0.1);
    CHECK(r.mean_accuracy == doctest::Approx(0.6));
    CHECK(r.std_accuracy == doctest::Approx(0.1));
    CHECK(r.ci95_halfwidth == doctest::Approx(1.96 * 0.1 / std::sqrt(3.0)));
    const EvalReport single = summarize_runs({0.8}, 0.1);
    CHECK_FALSE(single.ci_defined);
    CHECK(single.ci95_halfwidth == 0.0);
  }

  TEST_CASE("two hundred runs bound the interval when the spread is small") {
    std::vector<double> acc(200);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = i % 2 ? 0.8 + 0.0718 : 0.8 - 0.0718;
    const EvalReport r = summarize_runs(acc, 0.3);
    CHECK(r.std_accuracy <= 0.072);
    CHECK(r.ci95_halfwidth <= 0.01);
  }
}

TEST_SUITE("convergence") {
  TEST_CASE("all equal") {
    const double acc[] = {0.9, 0.9, 0.9};
    CHECK(convergence_stats(acc).nonconverged == 0);
  }

  TEST_CASE("one low run") {
    const double acc[] = {0.9, 0.9, 0.6};
    const auto s = convergence_stats(acc);
    CHECK(s.mean == doctest::Approx(0.8));
    CHECK(s.nonconverged == 1);
    CHECK(s.indices == std::vector<std::size_t>{2});
  }

  TEST_CASE("ten-run fixtures") {
    // Mean 0.86, cut 0.81: the six 0.80 runs fall below it.
    const double baseline[] = {0.95, 0.80, 0.95, 0.80, 0.80, 0.95, 0.80, 0.95, 0.80, 0.80};
    CHECK(convergence_stats(baseline).nonconverged == 6);
    const double steady[] = {0.91, 0.90, 0.92, 0.89, 0.90, 0.91, 0.90, 0.88, 0.92, 0.90};
    CHECK(convergence_stats(steady).nonconverged == 0);
  }

  TEST_CASE("a single run has no reference mean") {
    const double acc[] = {0.9};
    CHECK_THROWS_AS(convergence_stats(acc), ValidationError);
  }
}
