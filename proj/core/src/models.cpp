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

#include "ovfsim/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "ovfsim/error.hpp"

namespace ovfsim {

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::kMlp ? "mlp" : "small_cnn";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "mlp") return ModelKind::kMlp;
  if (text == "small_cnn" || text == "smallcnn") return ModelKind::kSmallCnn;
  throw ValidationError("unknown model kind '" + std::string(text) + "'");
}

ModelSpec ModelSpec::mlp(std::vector<std::size_t> layer_sizes,
                         std::array<std::size_t, 3> input_shape) {
  ModelSpec spec;
  spec.kind = ModelKind::kMlp;
  spec.input_shape = input_shape;
  spec.num_classes = layer_sizes.empty() ? 0 : layer_sizes.back();
  spec.layer_sizes = std::move(layer_sizes);
  spec.conv_channels.clear();
  return spec;
}

ModelSpec ModelSpec::small_cnn(std::size_t num_classes, std::array<std::size_t, 3> input_shape) {
  ModelSpec spec;
  spec.kind = ModelKind::kSmallCnn;
  spec.num_classes = num_classes;
  spec.input_shape = input_shape;
  return spec;
}

namespace {

// Spatial extent after each conv(valid) -> maxpool2 stage.
std::size_t cnn_stage(std::size_t extent, std::size_t kernel) {
  if (extent < kernel) return 0;
  return (extent - kernel + 1) / 2;
}

}  // namespace

void validate(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("model: num_classes must be >= 2");
  if (spec.input_size() == 0) throw ValidationError("model: empty input shape");
  if (spec.kind == ModelKind::kMlp) {
    const auto& ls = spec.layer_sizes;
    if (ls.size() < 2) throw ValidationError("model: MLP needs at least input and output sizes");
    if (ls.front() != spec.input_size()) {
      throw ValidationError("model: MLP input size " + std::to_string(ls.front()) +
                            " != input shape size " + std::to_string(spec.input_size()));
    }
    if (ls.back() != spec.num_classes) {
      throw ValidationError("model: MLP output size " + std::to_string(ls.back()) +
                            " != num_classes " + std::to_string(spec.num_classes));
    }
    if (std::find(ls.begin(), ls.end(), 0u) != ls.end()) {
      throw ValidationError("model: MLP layer sizes must be positive");
    }
    return;
  }
  if (spec.conv_channels.size() != 2 || spec.conv_channels[0] == 0 || spec.conv_channels[1] == 0) {
    throw ValidationError("model: SmallCNN needs two positive conv channel counts");
  }
  if (spec.kernel_size == 0) throw ValidationError("model: kernel_size must be positive");
  for (std::size_t axis : {1, 2}) {
    const std::size_t after = cnn_stage(cnn_stage(spec.input_shape[axis], spec.kernel_size),
                                        spec.kernel_size);
    if (after == 0) {
      throw ValidationError("model: input extent " + std::to_string(spec.input_shape[axis]) +
                            " too small for two conv/pool stages");
    }
  }
}

std::string to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(spec.kind);
  j["input_shape"] = spec.input_shape;
  j["num_classes"] = spec.num_classes;
  if (spec.kind == ModelKind::kMlp) {
    j["layer_sizes"] = spec.layer_sizes;
  } else {
    j["conv_channels"] = spec.conv_channels;
    j["kernel_size"] = spec.kernel_size;
  }
  return j.dump();
}

ModelSpec model_spec_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec spec;
    spec.kind = parse_model_kind(j.at("kind").get<std::string>());
    spec.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    if (spec.kind == ModelKind::kMlp) {
      spec.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
      spec.conv_channels.clear();
    } else {
      spec.conv_channels = j.value("conv_channels", std::vector<std::size_t>{8, 16});
      spec.kernel_size = j.value("kernel_size", std::size_t{3});
    }
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

Tensor& ParamSet::at(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ValidationError("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::uint64_t ParamSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (std::size_t d : e.tensor.shape()) mix(&d, sizeof d);
    mix(e.tensor.data().data(), e.tensor.size() * sizeof(Real));
  }
  return h;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name) return false;
    const auto& x = a.entries_[i].tensor;
    const auto& y = b.entries_[i].tensor;
    if (x.shape() != y.shape()) return false;
    if (std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(Real)) != 0) return false;
  }
  return true;
}

bool is_weight(std::string_view name) {
  return name.size() >= 7 && name.substr(name.size() - 7) == ".weight";
}

// ---------------------------------------------------------------------------
// build / forward

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

std::size_t cnn_flat_features(const ModelSpec& spec) {
  const std::size_t h = cnn_stage(cnn_stage(spec.input_shape[1], spec.kernel_size), spec.kernel_size);
  const std::size_t w = cnn_stage(cnn_stage(spec.input_shape[2], spec.kernel_size), spec.kernel_size);
  return spec.conv_channels[1] * h * w;
}

}  // namespace

ParamSet build(const ModelSpec& spec, Rng& rng) {
  validate(spec);
  ParamSet params;
  if (spec.kind == ModelKind::kMlp) {
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
      const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
      const std::string prefix = "fc" + std::to_string(l + 1);
      params.add(prefix + ".weight", kaiming_uniform({in, out}, in, rng));
      params.add(prefix + ".bias", Tensor({out}));
    }
    return params;
  }
  const std::size_t k = spec.kernel_size;
  const std::size_t c0 = spec.input_shape[0], c1 = spec.conv_channels[0], c2 = spec.conv_channels[1];
  params.add("conv1.weight", kaiming_uniform({c1, c0, k, k}, c0 * k * k, rng));
  params.add("conv1.bias", Tensor({c1}));
  params.add("conv2.weight", kaiming_uniform({c2, c1, k, k}, c1 * k * k, rng));
  params.add("conv2.bias", Tensor({c2}));
  const std::size_t flat = cnn_flat_features(spec);
  params.add("fc.weight", kaiming_uniform({flat, spec.num_classes}, flat, rng));
  params.add("fc.bias", Tensor({spec.num_classes}));
  return params;
}

namespace {

Var weight_var(Graph& graph, ParamSet& params, std::string_view name,
               const WeightTransform& transform) {
  Tensor& w = params.at(name);
  Var leaf = graph.parameter(w);
  if (!transform) return leaf;
  return straight_through(leaf, transform(name, w));
}

}  // namespace

Var forward(Graph& graph, ParamSet& params, const ModelSpec& spec, const Tensor& batch,
            const WeightTransform& transform) {
  const auto& is = spec.input_shape;
  if (batch.rank() != 4 || batch.dim(1) != is[0] || batch.dim(2) != is[1] || batch.dim(3) != is[2]) {
    throw DimensionError("forward: batch shape " + to_string(batch.shape()) + " does not match [n x " +
                         std::to_string(is[0]) + "x" + std::to_string(is[1]) + "x" +
                         std::to_string(is[2]) + "]");
  }
  Var x = graph.constant(batch);
  if (spec.kind == ModelKind::kMlp) {
    x = flatten(x);
    const std::size_t layers = spec.layer_sizes.size() - 1;
    for (std::size_t l = 1; l <= layers; ++l) {
      const std::string prefix = "fc" + std::to_string(l);
      x = matmul(x, weight_var(graph, params, prefix + ".weight", transform));
      x = bias_add(x, graph.parameter(params.at(prefix + ".bias")));
      if (l < layers) x = relu(x);
    }
    return x;
  }
  x = conv2d(x, weight_var(graph, params, "conv1.weight", transform));
  x = maxpool2d(relu(bias_add(x, graph.parameter(params.at("conv1.bias")))), 2);
  x = conv2d(x, weight_var(graph, params, "conv2.weight", transform));
  x = maxpool2d(relu(bias_add(x, graph.parameter(params.at("conv2.bias")))), 2);
  x = matmul(flatten(x), weight_var(graph, params, "fc.weight", transform));
  return bias_add(x, graph.parameter(params.at("fc.bias")));
}

Tensor predict_logits(const ParamSet& params, const ModelSpec& spec, const Tensor& batch,
                      const WeightTransform& transform, std::size_t chunk) {
  if (batch.rank() != 4) throw DimensionError("predict_logits: expected 4-d batch");
  const std::size_t n = batch.dim(0);
  const std::size_t per_sample = n ? batch.size() / n : 0;
  chunk = std::max<std::size_t>(chunk, 1);

  // Transform once; every chunk must see the same programmed weights.
  ParamSet effective;
  for (const auto& e : params) {
    effective.add(e.name, transform && is_weight(e.name) ? transform(e.name, e.tensor) : e.tensor);
  }

  Tensor logits({n, spec.num_classes});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Shape shape = batch.shape();
    shape[0] = m;
    std::vector<Real> slice(batch.data().begin() + static_cast<std::ptrdiff_t>(start * per_sample),
                            batch.data().begin() + static_cast<std::ptrdiff_t>((start + m) * per_sample));
    Graph graph(GradMode::kDisabled);
    const Var out = forward(graph, effective, spec, Tensor(std::move(shape), std::move(slice)));
    std::copy(out.value().data().begin(), out.value().data().end(),
              logits.data().begin() + static_cast<std::ptrdiff_t>(start * spec.num_classes));
  }
  return logits;
}

}  // namespace ovfsim
