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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ovfsim/autodiff.hpp"
#include "ovfsim/rng.hpp"
#include "ovfsim/tensor.hpp"

namespace ovfsim {

enum class ModelKind { kMlp, kSmallCnn };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct ModelSpec {
  ModelKind kind = ModelKind::kSmallCnn;
  /// Channels x height x width of one sample.
  std::array<std::size_t, 3> input_shape{1, 28, 28};
  std::size_t num_classes = 10;
  /// MLP: full chain including input and output, e.g. {784, 128, 10}.
  std::vector<std::size_t> layer_sizes;
  /// SmallCNN: output channels of the two conv stages.
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t kernel_size = 3;

  static ModelSpec mlp(std::vector<std::size_t> layer_sizes,
                       std::array<std::size_t, 3> input_shape = {1, 28, 28});
  static ModelSpec small_cnn(std::size_t num_classes = 10,
                             std::array<std::size_t, 3> input_shape = {1, 28, 28});

  std::size_t input_size() const { return input_shape[0] * input_shape[1] * input_shape[2]; }
};

/// Throws ValidationError when the layer chain is not shape-consistent.
void validate(const ModelSpec& spec);

std::string to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(std::string_view json);

/// Named parameter tensors in insertion order.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  /// Throws ValidationError on a duplicate name.
  void add(std::string name, Tensor tensor);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  /// FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t fingerprint() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Entry> entries_;
};

/// Weights (not biases) are the tensors mapped onto crossbars.
bool is_weight(std::string_view name);

/// Kaiming-uniform weights with bound sqrt(2 / fan_in), zero biases.
ParamSet build(const ModelSpec& spec, Rng& rng);

/// Replaces a weight tensor's forward value; receives the parameter name and
/// its clean value. An empty transform means clean inference.
using WeightTransform = std::function<Tensor(std::string_view name, const Tensor& weight)>;

/// Logits [n x num_classes]. Transformed weights enter the graph through
/// straight_through, so their gradient lands on the clean parameters.
/// Biases are never transformed.
Var forward(Graph& graph, ParamSet& params, const ModelSpec& spec, const Tensor& batch,
            const WeightTransform& transform = {});

/// Inference-only forward in chunks of `chunk` samples.
Tensor predict_logits(const ParamSet& params, const ModelSpec& spec, const Tensor& batch,
                      const WeightTransform& transform = {}, std::size_t chunk = 500);

}  // namespace ovfsim
