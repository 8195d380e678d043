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

#include <algorithm>
#include <cmath>
#include <vector>

#include "ovfsim/device_model.hpp"
#include "ovfsim/error.hpp"
#include "ovfsim/rng.hpp"
#include "support/gradcheck.hpp"

using namespace ovfsim;

namespace {

DeviceConfig device(double sigma, int m = 8, int k = 2) {
  DeviceConfig d;
  d.weight_bits = m;
  d.device_bits = k;
  d.sigma_d = sigma;
  return d;
}

}  // namespace

TEST_SUITE("quantize") {
  TEST_CASE("levels, signs and scale of a small tensor") {
    const Tensor w({4}, std::vector<Real>{-1.0, 0.5, 0.0, 0.25});
    const QuantizedLayer q = quantize(w, device(0.0));
    CHECK(q.scale == doctest::Approx(1.0 / 255));
    CHECK(q.levels == std::vector<std::uint32_t>{255, 128, 0, 64});
    CHECK(q.sign == std::vector<std::int8_t>{-1, 1, 1, 1});
    // 255 = 0b11'11'11'11, 128 = 0b10'00'00'00, 64 = 0b01'00'00'00 (little-endian devices)
    CHECK(q.device_levels == std::vector<std::uint32_t>{3, 3, 3, 3, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 1});
  }

  TEST_CASE("two-weight example") {
    const QuantizedLayer q = quantize(Tensor({2}, std::vector<Real>{0.5, -1.0}), device(0.0));
    CHECK(q.scale == doctest::Approx(1.0 / 255));
    CHECK(q.levels == std::vector<std::uint32_t>{128, 255});
    const Tensor wd = desired_weights(q);
    CHECK(wd[0] == doctest::Approx(128.0 / 255).epsilon(1e-15));
    CHECK(wd[1] == -1.0);
  }

  TEST_CASE("desired weights are within half a level of the input") {
    const Tensor w = testing::random_tensor({50}, 3);
    const QuantizedLayer q = quantize(w, device(0.0));
    const Tensor wd = desired_weights(q);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(wd[i] - w[i]) <= q.scale / 2 + 1e-15);
  }

  TEST_CASE("all-zero tensor") {
    const QuantizedLayer q = quantize(Tensor({3}), device(0.2));
    CHECK(q.scale == 0.0);
    Rng rng(1);
    const Tensor p = perturb(q, device(0.2), rng);
    for (Real v : p.data()) CHECK(v == 0.0);
  }

  TEST_CASE("non-finite weights are rejected") {
    Tensor w({2}, 1.0);
    w[0] = INFINITY;
    CHECK_THROWS_AS(quantize(w, device(0.0)), ValidationError);
  }
}

TEST_SUITE("bit slicing") {
  TEST_CASE("exhaustive round trip for several (M, K)") {
    for (auto [m, k] : {std::pair{8, 2}, {8, 1}, {8, 4}, {8, 8}, {6, 3}, {12, 4}}) {
      const DeviceConfig cfg = device(0.0, m, k);
      std::vector<std::uint32_t> levels(cfg.max_level() + 1);
      for (std::uint32_t i = 0; i < levels.size(); ++i) levels[i] = i;
      const auto devices = slice_to_devices(levels, cfg);
      CHECK(devices.size() == levels.size() * static_cast<std::size_t>(cfg.devices_per_weight()));
      for (auto g : devices) CHECK(g <= cfg.max_device_level());
      CHECK(assemble_levels(devices, cfg) == levels);
    }
  }

  TEST_CASE("single level") {
    const std::uint32_t level[] = {0b10110010};
    CHECK(slice_to_devices(level, device(0.0)) == std::vector<std::uint32_t>{2, 0, 3, 2});
  }

  TEST_CASE("out-of-range level") {
    const std::uint32_t bad[] = {256};
    CHECK_THROWS_AS(slice_to_devices(bad, device(0.0)), ValidationError);
  }
}

TEST_SUITE("device config") {
  TEST_CASE("validation") {
    CHECK_THROWS_AS(validate(device(0.1, 8, 3)), ValidationError);
    CHECK_THROWS_AS(validate(device(0.1, 4, 8)), ValidationError);
    CHECK_THROWS_AS(validate(device(-0.1)), ValidationError);
    CHECK_THROWS_AS(validate(device(0.1, 0, 1)), ValidationError);
    CHECK(validate(device(0.4)).empty());
    CHECK(validate(device(0.45)).size() == 1);
  }

  TEST_CASE("conductance sigma is relative to the largest device conductance") {
    CHECK(device(0.1).conductance_sigma() == doctest::Approx(0.3));
    DeviceConfig lit = device(0.1);
    lit.noise_scale = NoiseScale::kLiteral;
    CHECK(lit.conductance_sigma() == doctest::Approx(0.1));
  }
}

TEST_SUITE("perturb") {
  TEST_CASE("zero sigma reproduces the quantized weights") {
    const Tensor w = testing::random_tensor({20}, 4);
    const QuantizedLayer q = quantize(w, device(0.0));
    Rng rng(9);
    CHECK(perturb(q, device(0.0), rng) == desired_weights(q));
  }

  TEST_CASE("each device contributes at its bit position") {
    const Tensor w({2}, std::vector<Real>{-0.5, 1.0});
    const DeviceConfig cfg = device(0.1);
    const QuantizedLayer q = quantize(w, cfg);
    const Tensor wd = desired_weights(q);
    // Weight 0 gets +1 on device 0, weight 1 gets +1 on device 3.
    const std::vector<double> z{1, 0, 0, 0, 0, 0, 0, 1};
    const Tensor p = perturb(q, cfg, z);
    const double dg = 0.1 * 3;  // sigma_d * (2^K - 1)
    CHECK(p[0] == doctest::Approx(wd[0] - q.scale * dg * 1));
    CHECK(p[1] == doctest::Approx(wd[1] + q.scale * dg * 64));
  }

  TEST_CASE("wrong number of normals") {
    const QuantizedLayer q = quantize(Tensor({2}, 1.0), device(0.1));
    const std::vector<double> z(3);
    CHECK_THROWS_AS(perturb(q, device(0.1), z), DimensionError);
  }

  TEST_CASE("closed-form standard deviation") {
    // sum_j 4^(jK) for M=8, K=2 is 1 + 16 + 256 + 4096.
    CHECK(perturbation_stddev(0.01, device(0.2)) == doctest::Approx(0.01 * 0.2 * 3 * std::sqrt(4369.0)));
  }

  TEST_CASE("sample statistics agree with the closed form") {
    const Tensor w({1000}, 0.3);
    const DeviceConfig cfg = device(0.25);
    const QuantizedLayer q = quantize(w, cfg);
    const double target = desired_weights(q)[0];
    Rng rng(123);
    double sum = 0, sum2 = 0;
    std::size_t n = 0;
    for (int rep = 0; rep < 200; ++rep) {
      for (Real v : perturb(q, cfg, rng).data()) {
        sum += v - target;
        sum2 += (v - target) * (v - target);
        ++n;
      }
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double sd = perturbation_stddev(q.scale, cfg);
    CHECK(std::abs(mean) < 4 * sd / std::sqrt(static_cast<double>(n)));
    CHECK(var == doctest::Approx(sd * sd).epsilon(0.02));
  }

  TEST_CASE("same seed, same chip") {
    const QuantizedLayer q = quantize(testing::random_tensor({30}, 5), device(0.3));
    Rng a(7, {1, 2}), b(7, {1, 2}), c(7, {1, 3});
    const Tensor pa = perturb(q, device(0.3), a);
    CHECK(pa == perturb(q, device(0.3), b));
    CHECK_FALSE(pa == perturb(q, device(0.3), c));
  }

  TEST_CASE("graph version: programmed forward value, identity gradient") {
    Tensor w = testing::random_tensor({3, 4}, 6);
    Rng r1(11), r2(11);
    const Tensor expected = perturbed_forward_weights(w, device(0.2), r1);
    Graph g;
    const Var out = perturbed_forward_weights(g.parameter(w), device(0.2), r2);
    CHECK(out.value() == expected);
    g.backward(sum(out));
    for (Real v : std::as_const(w).grad()) CHECK(v == 1.0);
  }
}

TEST_SUITE("perturbed_forward_weights") {
  TEST_CASE("matches perturb of quantize in distribution") {
    // Two-sample Kolmogorov-Smirnov at alpha = 0.01 with 1e5 draws per side.
    const Tensor w({1}, 0.37);
    const DeviceConfig cfg = device(0.3);
    const QuantizedLayer q = quantize(Tensor({1}, std::vector<Real>{0.37}), cfg);
    constexpr std::size_t n = 100000;
    std::vector<double> a(n), b(n);
    Rng ra(21), rb(22);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = perturbed_forward_weights(w, cfg, ra)[0];
      b[i] = perturb(q, cfg, rb)[0];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0;
    std::size_t i = 0, j = 0;
    while (i < n && j < n) {
      if (a[i] <= b[j]) ++i; else ++j;
      d = std::max(d, std::abs(static_cast<double>(i) - static_cast<double>(j)) / n);
    }
    CHECK(d < 1.628 * std::sqrt(2.0 / n));
  }
}

TEST_SUITE("rng") {
  TEST_CASE("derived seeds differ per stream and are stable") {
    CHECK(derive_seed(1, {2}) == derive_seed(1, {2}));
    CHECK(derive_seed(1, {2}) != derive_seed(1, {3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  }
}
