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

#include "ovfsim/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "ovfsim/error.hpp"

namespace ovfsim {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(DatasetSource v) {
  return v == DatasetSource::kMnistIdx ? "mnist_idx" : "synthetic";
}

DatasetSource parse_dataset_source(std::string_view text) {
  if (text == "mnist_idx") return DatasetSource::kMnistIdx;
  if (text == "synthetic") return DatasetSource::kSynthetic;
  throw ValidationError("unknown dataset source '" + std::string(text) + "'");
}

TrainConfig ExperimentConfig::train_config(Regime regime, double sigma_d, std::uint64_t s) const {
  TrainConfig t = train;
  t.regime = regime;
  t.device.sigma_d = sigma_d;
  t.seed = s;
  t.ovf.reset();
  if (regime == Regime::kOvf) t.ovf = ovf;
  return t;
}

std::vector<std::uint64_t> ExperimentConfig::sweep_seeds() const {
  return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
}

void validate(const ExperimentConfig& c) {
  try {
    validate(c.model);
    validate(c.train.device);
    validate(c.ovf);
    validate(c.train_config(Regime::kOvf, c.train.device.sigma_d, c.seed));
    if (c.dataset.source == DatasetSource::kSynthetic) {
      validate(c.dataset.synthetic);
      if (c.dataset.synthetic_test_per_class == 0) {
        throw ValidationError("dataset.synthetic_test_per_class must be > 0");
      }
      const std::size_t side = c.dataset.synthetic.image_side;
      const std::array<std::size_t, 3> shape =
          side ? std::array<std::size_t, 3>{1, side, side}
               : std::array<std::size_t, 3>{1, 1, c.dataset.synthetic.input_dim};
      if (shape != c.model.input_shape) {
        throw ValidationError("model.input_shape does not match the synthetic sample shape");
      }
    } else {
      for (const auto* p : {&c.dataset.train_images, &c.dataset.train_labels, &c.dataset.test_images,
                            &c.dataset.test_labels}) {
        if (p->empty()) throw ValidationError("dataset: mnist_idx needs all four file paths");
      }
    }
  } catch (const ValidationError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (c.eval.sigma_grid.empty()) throw UsageError("config: eval.sigma_grid is empty");
  for (double s : c.eval.sigma_grid) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw UsageError("config: eval.sigma_grid values must be >= 0");
  }
  if (c.eval.runs == 0) throw UsageError("config: eval.runs must be >= 1");
  if (c.eval.chunk == 0) throw UsageError("config: eval.chunk must be >= 1");
  if (c.beta_search.candidates.empty()) throw UsageError("config: beta_search.candidates is empty");
  for (double b : c.beta_search.candidates) {
    if (!(b >= 0.0)) throw UsageError("config: beta_search.candidates must be >= 0");
  }
  if (c.beta_search.runs == 0) throw UsageError("config: beta_search.runs must be >= 1");
  if (c.output_dir.empty()) throw UsageError("config: output_dir is empty");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void allow_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw UsageError("config: '" + std::string(section) + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (auto key : keys) known = known || key == k;
    if (!known) throw UsageError("config: unknown key '" + std::string(section) + "." + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end()) {
    if (it->is_null()) {
      out.reset();
    } else {
      out = it->get<T>();
    }
  }
}

template <class Parse, class T>
void read_enum(const json& j, const char* key, T& out, Parse parse) {
  if (auto it = j.find(key); it != j.end()) out = parse(it->get<std::string>());
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return fs::absolute(base / p).lexically_normal();
}

void read_dataset(const json& j, DatasetConfig& d, const fs::path& base) {
  allow_keys(j, "dataset", {"source", "train_images", "train_labels", "test_images", "test_labels",
                            "train_limit", "test_limit", "synthetic", "synthetic_test_per_class"});
  read_enum(j, "source", d.source, parse_dataset_source);
  for (auto [key, path] : {std::pair{"train_images", &d.train_images}, {"train_labels", &d.train_labels},
                           {"test_images", &d.test_images}, {"test_labels", &d.test_labels}}) {
    if (auto it = j.find(key); it != j.end()) *path = resolve(base, it->get<std::string>());
  }
  read(j, "train_limit", d.train_limit);
  read(j, "test_limit", d.test_limit);
  read(j, "synthetic_test_per_class", d.synthetic_test_per_class);
  if (auto it = j.find("synthetic"); it != j.end()) {
    allow_keys(*it, "dataset.synthetic",
               {"num_classes", "samples_per_class", "input_dim", "separation", "image_side"});
    auto& s = d.synthetic;
    read(*it, "num_classes", s.num_classes);
    read(*it, "samples_per_class", s.samples_per_class);
    read(*it, "input_dim", s.input_dim);
    read(*it, "separation", s.separation);
    read(*it, "image_side", s.image_side);
  }
}

std::array<std::size_t, 3> default_input_shape(const DatasetConfig& d) {
  if (d.source == DatasetSource::kMnistIdx) return {1, 28, 28};
  const std::size_t side = d.synthetic.image_side;
  return side ? std::array<std::size_t, 3>{1, side, side}
              : std::array<std::size_t, 3>{1, 1, d.synthetic.input_dim};
}

void read_model(const json* j, ModelSpec& m, const DatasetConfig& d) {
  m.input_shape = default_input_shape(d);
  m.num_classes = d.source == DatasetSource::kMnistIdx ? 10 : d.synthetic.num_classes;
  const json none = json::object();
  const json& o = j ? *j : none;
  allow_keys(o, "model", {"kind", "input_shape", "num_classes", "layer_sizes", "conv_channels", "kernel_size"});
  read(o, "input_shape", m.input_shape);
  // Flat samples cannot go through the conv stages, so they default to an MLP.
  if (m.input_shape[1] == 1) m.kind = ModelKind::kMlp;
  read_enum(o, "kind", m.kind, parse_model_kind);
  read(o, "num_classes", m.num_classes);
  read(o, "conv_channels", m.conv_channels);
  read(o, "kernel_size", m.kernel_size);
  if (m.kind == ModelKind::kMlp) {
    m.conv_channels.clear();
    m.layer_sizes = {m.input_size(), 128, m.num_classes};
    read(o, "layer_sizes", m.layer_sizes);
  }
}

void read_device(const json& j, DeviceConfig& d) {
  allow_keys(j, "device", {"weight_bits", "device_bits", "sigma_d", "noise_scale"});
  read(j, "weight_bits", d.weight_bits);
  read(j, "device_bits", d.device_bits);
  read(j, "sigma_d", d.sigma_d);
  if (auto it = j.find("noise_scale"); it != j.end()) {
    const auto s = it->get<std::string>();
    if (s == "max_conductance") {
      d.noise_scale = NoiseScale::kMaxConductance;
    } else if (s == "literal") {
      d.noise_scale = NoiseScale::kLiteral;
    } else {
      throw UsageError("config: unknown device.noise_scale '" + s + "'");
    }
  }
}

void read_train(const json& j, TrainConfig& t) {
  allow_keys(j, "train", {"regime", "epochs", "batch_size", "learning_rate", "momentum", "lr_step_epochs",
                          "lr_decay", "noise_space", "divergence_factor", "divergence_patience"});
  read_enum(j, "regime", t.regime, parse_regime);
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "learning_rate", t.learning_rate);
  read(j, "momentum", t.momentum);
  read(j, "lr_step_epochs", t.lr_step_epochs);
  read(j, "lr_decay", t.lr_decay);
  read_enum(j, "noise_space", t.noise_space, parse_noise_space);
  read(j, "divergence_factor", t.divergence_factor);
  read(j, "divergence_patience", t.divergence_patience);
}

void read_ovf(const json& j, OvfConfig& o) {
  allow_keys(j, "ovf", {"num_forwards", "beta", "start", "end", "delta_sigma", "a_b", "a_f", "schedule",
                        "combine", "sharing", "compensate_lr"});
  read(j, "num_forwards", o.num_forwards);
  read(j, "beta", o.beta);
  read(j, "start", o.start);
  read_optional(j, "end", o.end);
  read(j, "delta_sigma", o.delta_sigma);
  read_optional(j, "a_b", o.a_b);
  read_optional(j, "a_f", o.a_f);
  read_enum(j, "schedule", o.schedule, parse_schedule_mode);
  read_enum(j, "combine", o.combine, parse_combine_space);
  read_enum(j, "sharing", o.sharing, parse_noise_sharing);
  read(j, "compensate_lr", o.compensate_lr);
}

void read_eval(const json& j, EvalConfig& e) {
  allow_keys(j, "eval", {"runs", "sigma_grid", "kl_direction", "threads", "chunk", "convergence_threshold"});
  read(j, "runs", e.runs);
  read(j, "sigma_grid", e.sigma_grid);
  read_enum(j, "kl_direction", e.kl_direction, parse_kl_direction);
  read(j, "threads", e.threads);
  read(j, "chunk", e.chunk);
  read(j, "convergence_threshold", e.convergence_threshold);
}

void read_beta_search(const json& j, BetaSearchConfig& b) {
  allow_keys(j, "beta_search", {"candidates", "validation_size", "runs"});
  read(j, "candidates", b.candidates);
  read(j, "validation_size", b.validation_size);
  read(j, "runs", b.runs);
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    json j = json::parse(text);
    if (j.is_object() && j.contains("config") && j.contains("command")) j = j.at("config");
    allow_keys(j, "", {"dataset", "model", "device", "train", "ovf", "eval", "beta_search", "output_dir",
                       "checkpoint", "seed", "seeds"});
    if (auto it = j.find("dataset"); it != j.end()) read_dataset(*it, c.dataset, base_dir);
    auto model = j.find("model");
    read_model(model != j.end() ? &*model : nullptr, c.model, c.dataset);
    if (auto it = j.find("device"); it != j.end()) read_device(*it, c.train.device);
    if (auto it = j.find("train"); it != j.end()) read_train(*it, c.train);
    if (auto it = j.find("ovf"); it != j.end()) read_ovf(*it, c.ovf);
    if (auto it = j.find("eval"); it != j.end()) read_eval(*it, c.eval);
    if (auto it = j.find("beta_search"); it != j.end()) read_beta_search(*it, c.beta_search);
    if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = resolve(base_dir, it->get<std::string>());
    if (auto it = j.find("checkpoint"); it != j.end()) c.checkpoint = resolve(base_dir, it->get<std::string>());
    read(j, "seed", c.seed);
    read(j, "seeds", c.seeds);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const ValidationError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), fs::absolute(path).parent_path());
}

std::string to_json(const ExperimentConfig& c, int indent) {
  ordered_json j;
  const auto& d = c.dataset;
  j["dataset"] = {
      {"source", to_string(d.source)},
      {"train_images", d.train_images.string()},
      {"train_labels", d.train_labels.string()},
      {"test_images", d.test_images.string()},
      {"test_labels", d.test_labels.string()},
      {"train_limit", d.train_limit},
      {"test_limit", d.test_limit},
      {"synthetic",
       {{"num_classes", d.synthetic.num_classes},
        {"samples_per_class", d.synthetic.samples_per_class},
        {"input_dim", d.synthetic.input_dim},
        {"separation", d.synthetic.separation},
        {"image_side", d.synthetic.image_side}}},
      {"synthetic_test_per_class", d.synthetic_test_per_class},
  };
  j["model"] = ordered_json::parse(to_json(c.model));
  const auto& dev = c.train.device;
  j["device"] = {{"weight_bits", dev.weight_bits},
                 {"device_bits", dev.device_bits},
                 {"sigma_d", dev.sigma_d},
                 {"noise_scale", dev.noise_scale == NoiseScale::kLiteral ? "literal" : "max_conductance"}};
  const auto& t = c.train;
  j["train"] = {{"regime", to_string(t.regime)},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"lr_step_epochs", t.lr_step_epochs},
                {"lr_decay", t.lr_decay},
                {"noise_space", to_string(t.noise_space)},
                {"divergence_factor", t.divergence_factor},
                {"divergence_patience", t.divergence_patience}};
  const auto& o = c.ovf;
  j["ovf"] = {{"num_forwards", o.num_forwards},
              {"beta", o.beta},
              {"start", o.start},
              {"end", opt(o.end)},
              {"delta_sigma", o.delta_sigma},
              {"a_b", opt(o.a_b)},
              {"a_f", opt(o.a_f)},
              {"schedule", to_string(o.schedule)},
              {"combine", to_string(o.combine)},
              {"sharing", to_string(o.sharing)},
              {"compensate_lr", o.compensate_lr}};
  const auto& e = c.eval;
  j["eval"] = {{"runs", e.runs},
               {"sigma_grid", e.sigma_grid},
               {"kl_direction", to_string(e.kl_direction)},
               {"threads", e.threads},
               {"chunk", e.chunk},
               {"convergence_threshold", e.convergence_threshold}};
  j["beta_search"] = {{"candidates", c.beta_search.candidates},
                      {"validation_size", c.beta_search.validation_size},
                      {"runs", c.beta_search.runs}};
  j["output_dir"] = c.output_dir.string();
  j["checkpoint"] = c.checkpoint.string();
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  return j.dump(indent);
}

LoadedData load_data(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  LoadedData out;
  if (d.source == DatasetSource::kSynthetic) {
    out.train = make_synthetic(d.synthetic, derive_seed(c.seed, {0xda7a, 1}));
    SyntheticDatasetSpec test_spec = d.synthetic;
    test_spec.samples_per_class = d.synthetic_test_per_class;
    out.test = make_synthetic(test_spec, derive_seed(c.seed, {0xda7a, 2}));
  } else {
    for (const auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels}) {
      if (!fs::exists(*p)) throw UsageError("dataset: no such file '" + p->string() + "'");
    }
    out.train = load_mnist_idx(d.train_images, d.train_labels);
    out.test = load_mnist_idx(d.test_images, d.test_labels);
  }
  if (d.train_limit) out.train = out.train.head(d.train_limit);
  if (d.test_limit) out.test = out.test.head(d.test_limit);
  return out;
}

}  // namespace ovfsim
