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
#include <filesystem>
#include <fstream>
#include <vector>

#include "ovfsim/checkpoint.hpp"
#include "ovfsim/dataset.hpp"
#include "ovfsim/device_model.hpp"
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

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ovfsim_test_models";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("build") {
  TEST_CASE("MLP parameter shapes") {
    Rng rng(1);
    const ParamSet p = build(ModelSpec::mlp({784, 128, 10}), rng);
    REQUIRE(p.size() == 4);
    CHECK(p.at("fc1.weight").shape() == Shape{784, 128});
    CHECK(p.at("fc1.bias").shape() == Shape{128});
    CHECK(p.at("fc2.weight").shape() == Shape{128, 10});
    CHECK(p.at("fc2.bias").shape() == Shape{10});
    CHECK(p.parameter_count() == 784 * 128 + 128 + 128 * 10 + 10);
  }

  TEST_CASE("SmallCNN parameter shapes") {
    Rng rng(1);
    const ParamSet p = build(ModelSpec::small_cnn(), rng);
    CHECK(p.at("conv1.weight").shape() == Shape{8, 1, 3, 3});
    CHECK(p.at("conv2.weight").shape() == Shape{16, 8, 3, 3});
    // 28 -> conv 26 -> pool 13 -> conv 11 -> pool 5
    CHECK(p.at("fc.weight").shape() == Shape{16 * 5 * 5, 10});
    for (const auto& e : p) {
      if (!is_weight(e.name)) {
        for (Real v : e.tensor.data()) CHECK(v == 0.0);
      }
    }
  }

  TEST_CASE("same seed, same parameters") {
    Rng a(5), b(5), c(6);
    const ParamSet pa = build(ModelSpec::small_cnn(), a);
    CHECK(pa == build(ModelSpec::small_cnn(), b));
    CHECK(pa.fingerprint() != build(ModelSpec::small_cnn(), c).fingerprint());
  }

  TEST_CASE("first-layer init spread") {
    Rng rng(2);
    const ParamSet p = build(ModelSpec::mlp({784, 128, 10}), rng);
    const auto w = p.at("fc1.weight").data();
    double sum = 0, sum2 = 0;
    for (Real v : w) {
      sum += v;
      sum2 += v * v;
    }
    const double n = static_cast<double>(w.size());
    const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    const double want = std::sqrt(2.0 / 784) / std::sqrt(3.0);
    CHECK(std::abs(sd - want) < 0.1 * want);
  }

  TEST_CASE("inconsistent specs") {
    CHECK_THROWS_AS(validate(ModelSpec::mlp({100, 10})), ValidationError);
    CHECK_THROWS_AS(validate(ModelSpec::mlp({784})), ValidationError);
    CHECK_THROWS_AS(validate(ModelSpec::small_cnn(10, {1, 5, 5})), ValidationError);
    ModelSpec s = ModelSpec::small_cnn();
    s.num_classes = 1;
    CHECK_THROWS_AS(validate(s), ValidationError);
  }

  TEST_CASE("duplicate parameter names") {
    ParamSet p;
    p.add("a.weight", Tensor({1}));
    CHECK_THROWS_AS(p.add("a.weight", Tensor({1})), ValidationError);
  }

  TEST_CASE("spec JSON round trip") {
    const ModelSpec s = tiny_cnn();
    const ModelSpec r = model_spec_from_json(to_json(s));
    CHECK(r.kind == s.kind);
    CHECK(r.input_shape == s.input_shape);
    CHECK(r.num_classes == s.num_classes);
    CHECK(r.conv_channels == s.conv_channels);
    CHECK(r.kernel_size == s.kernel_size);
  }
}

TEST_SUITE("forward") {
  TEST_CASE("zero weights give zero logits") {
    Rng rng(3);
    const ModelSpec spec = tiny_cnn();
    ParamSet p = build(spec, rng);
    for (auto& e : p) e.tensor = Tensor(e.tensor.shape());
    const Tensor logits = predict_logits(p, spec, testing::random_tensor({3, 1, 10, 10}, 4));
    CHECK(logits.shape() == Shape{3, 4});
    for (Real v : logits.data()) CHECK(v == 0.0);
  }

  TEST_CASE("shape mismatch") {
    Rng rng(3);
    const ModelSpec spec = tiny_cnn();
    ParamSet p = build(spec, rng);
    Graph g;
    CHECK_THROWS_AS(forward(g, p, spec, Tensor({2, 1, 9, 10})), DimensionError);
    CHECK_THROWS_AS(predict_logits(p, spec, Tensor({2, 100})), DimensionError);
  }

  TEST_CASE("zero-noise device transform on grid weights equals the identity") {
    Rng rng(4);
    const ModelSpec spec = tiny_cnn();
    ParamSet p = build(spec, rng);
    DeviceConfig device;
    for (auto& e : p) {
      if (is_weight(e.name)) e.tensor = desired_weights(quantize(e.tensor, device));
    }
    const Tensor x = testing::random_tensor({5, 1, 10, 10}, 5);
    Rng noise(0);
    const WeightTransform t = [&](std::string_view, const Tensor& w) {
      return perturbed_forward_weights(w, device, noise);
    };
    CHECK(predict_logits(p, spec, x, t) == predict_logits(p, spec, x));
  }

  TEST_CASE("forward is pure and repeatable") {
    Rng rng(4);
    const ModelSpec spec = tiny_cnn();
    const ParamSet p = build(spec, rng);
    const ParamSet before = p;
    const Tensor x = testing::random_tensor({7, 1, 10, 10}, 6);
    const Tensor a = predict_logits(p, spec, x, {}, 3);
    CHECK(a == predict_logits(p, spec, x, {}, 500));
    CHECK(p == before);
  }

  TEST_CASE("full SmallCNN loss gradient") {
    Rng rng(7);
    const ModelSpec spec = tiny_cnn();
    ParamSet p = build(spec, rng);
    for (auto& e : p) {
      if (!is_weight(e.name)) e.tensor = testing::random_tensor(e.tensor.shape(), 8) ;
    }
    const Tensor x = testing::random_tensor({3, 1, 10, 10}, 9);
    const std::vector<int> labels{0, 3, 1};
    std::vector<Tensor*> inputs;
    for (auto& e : p) inputs.push_back(&e.tensor);
    const auto r = testing::check_gradients(inputs, [&](Graph& g, const std::vector<Var>&) {
      return softmax_cross_entropy(forward(g, p, spec, x), labels);
    });
    CHECK(r.checked == p.parameter_count());
    CHECK(r.rel_error < 1e-3);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit exact") {
    Rng rng(10);
    Checkpoint c{tiny_cnn(), build(tiny_cnn(), rng), R"({"regime":"ovf"})"};
    const auto path = temp_file("roundtrip.ovfc");
    save_checkpoint(path, c);
    const Checkpoint r = load_checkpoint(path);
    CHECK(r.params == c.params);
    CHECK(r.metadata_json == c.metadata_json);
    CHECK(to_json(r.spec) == to_json(c.spec));
  }

  TEST_CASE("clean forward reproduces the recorded accuracy") {
    SyntheticDatasetSpec ds;
    ds.num_classes = 4;
    ds.samples_per_class = 60;
    ds.input_dim = 100;
    ds.image_side = 10;
    ds.separation = 1.5;
    const Dataset data = make_synthetic(ds, 11);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 11;
    const TrainResult t = train(tiny_cnn(), data, nullptr, cfg);
    const double recorded = clean_accuracy(t.params, tiny_cnn(), data);
    const auto path = temp_file("trained.ovfc");
    save_checkpoint(path, Checkpoint{tiny_cnn(), t.params, "{}"});
    const Checkpoint r = load_checkpoint(path);
    CHECK(clean_accuracy(r.params, r.spec, data) == recorded);
  }

  TEST_CASE("corrupt files") {
    Rng rng(12);
    const auto path = temp_file("corrupt.ovfc");
    save_checkpoint(path, Checkpoint{tiny_cnn(), build(tiny_cnn(), rng), "{}"});
    std::vector<char> bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::vector<char>& b) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };

    write(std::vector<char>(bytes.begin(), bytes.end() - 5));
    CHECK_THROWS_AS(load_checkpoint(path), TruncatedError);

    auto bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK_THROWS_AS(load_checkpoint(path), BadMagicError);

    write({'O', 'V'});
    CHECK_THROWS_AS(load_checkpoint(path), BadMagicError);

    auto trailing = bytes;
    trailing.push_back(0);
    write(trailing);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    CHECK_THROWS_AS(load_checkpoint(temp_file("does_not_exist.ovfc")), IoError);
  }
}
