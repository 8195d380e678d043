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

#include "ovfsim/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <string>

#include "ovfsim/error.hpp"
#include "ovfsim/rng.hpp"

namespace ovfsim {

Dataset Dataset::gather(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  Shape shape = inputs.shape();
  const std::size_t per = size() ? inputs.size() / size() : 0;
  shape[0] = indices.size();
  std::vector<Real> data;
  data.reserve(indices.size() * per);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ValidationError("dataset: index " + std::to_string(i) + " out of range");
    const auto src = inputs.data().subspan(i * per, per);
    data.insert(data.end(), src.begin(), src.end());
    out.labels.push_back(labels[i]);
  }
  out.inputs = Tensor(std::move(shape), std::move(data));
  return out;
}

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return gather(idx);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};

// gzread passes uncompressed files through unchanged.
std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("idx: no such file '" + path.string() + "'");
  std::unique_ptr<gzFile_s, GzCloser> f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("idx: cannot open '" + path.string() + "'");
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  for (;;) {
    const int n = gzread(f.get(), buf, sizeof buf);
    if (n < 0) throw TruncatedError("idx: '" + path.string() + "' is truncated or corrupt");
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

struct Idx {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> bytes;
  std::size_t payload = 0;
};

Idx parse_idx(const std::filesystem::path& path, std::uint32_t magic, std::size_t rank) {
  Idx idx;
  idx.bytes = read_all(path);
  if (idx.bytes.size() < 4) throw TruncatedError("idx: '" + path.string() + "' is truncated (no header)");
  const std::uint32_t got = be32(idx.bytes, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X, expected 0x%08X", got, magic);
    throw BadMagicError("idx: '" + path.string() + "' has bad magic " + buf);
  }
  const std::size_t header = 4 + 4 * rank;
  if (idx.bytes.size() < header) throw TruncatedError("idx: '" + path.string() + "' is truncated (header)");
  std::size_t expect = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    idx.dims.push_back(be32(idx.bytes, 4 + 4 * d));
    expect *= idx.dims.back();
  }
  if (idx.bytes.size() - header < expect) {
    throw TruncatedError("idx: '" + path.string() + "' is truncated: " +
                         std::to_string(idx.bytes.size() - header) + " of " + std::to_string(expect) +
                         " payload bytes");
  }
  idx.payload = header;
  return idx;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const Idx img = parse_idx(images, 0x00000803, 3);
  const Idx lab = parse_idx(labels, 0x00000801, 1);
  if (img.dims[0] != lab.dims[0]) {
    throw CountMismatchError("idx: " + std::to_string(img.dims[0]) + " images but " +
                             std::to_string(lab.dims[0]) + " labels");
  }
  const std::size_t n = img.dims[0], rows = img.dims[1], cols = img.dims[2];
  Dataset data;
  data.num_classes = 10;
  std::vector<Real> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<Real>(img.bytes[img.payload + i]) / 255.0;
  }
  data.inputs = Tensor({n, 1, rows, cols}, std::move(pixels));
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = lab.bytes[lab.payload + i];
    if (label >= 10) throw ValidationError("idx: label " + std::to_string(label) + " at index " + std::to_string(i) + " outside [0, 10)");
    data.labels[i] = label;
  }
  return data;
}

void write_mnist_idx(const Dataset& data, const std::filesystem::path& images,
                     const std::filesystem::path& labels) {
  if (data.inputs.rank() != 4 || data.inputs.dim(1) != 1) {
    throw DimensionError("idx: expected n x 1 x rows x cols inputs, got " + to_string(data.inputs.shape()));
  }
  std::ofstream img(images, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw IoError("idx: cannot open output files");
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(data.inputs.dim(2)));
  put_be32(img, static_cast<std::uint32_t>(data.inputs.dim(3)));
  for (Real v : data.inputs.data()) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.put(static_cast<char>(l));
}

// ---------------------------------------------------------------------------
// Synthetic clusters

void validate(const SyntheticDatasetSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("synthetic: num_classes must be >= 2");
  if (spec.samples_per_class == 0) throw ValidationError("synthetic: samples_per_class must be > 0");
  if (spec.input_dim < spec.num_classes) {
    throw ValidationError("synthetic: input_dim must be >= num_classes");
  }
  if (!(spec.separation >= 0.0)) throw ValidationError("synthetic: separation must be >= 0");
  if (spec.image_side && spec.image_side * spec.image_side != spec.input_dim) {
    throw ValidationError("synthetic: image_side^2 must equal input_dim");
  }
}

Dataset make_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed, {0x5e17});
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  const std::size_t stride = spec.input_dim / spec.num_classes;
  std::vector<Real> x(n * spec.input_dim);
  Dataset data;
  data.num_classes = spec.num_classes;
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % spec.num_classes;
    data.labels[i] = static_cast<int>(cls);
    Real* row = x.data() + i * spec.input_dim;
    for (std::size_t d = 0; d < spec.input_dim; ++d) row[d] = rng.normal();
    row[cls * stride] += spec.separation;
  }
  const Shape shape = spec.image_side ? Shape{n, 1, spec.image_side, spec.image_side}
                                      : Shape{n, 1, 1, spec.input_dim};
  data.inputs = Tensor(shape, std::move(x));
  return data;
}

double synthetic_bayes_accuracy(const SyntheticDatasetSpec& spec) {
  validate(spec);
  const auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  const auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  const double lo = -12.0 - spec.separation, hi = 12.0;
  const int steps = 4000;
  const double h = (hi - lo) / steps;
  const double others = static_cast<double>(spec.num_classes - 1);
  double acc = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double z = lo + h * i;
    const double f = phi(z) * std::pow(cdf(z + spec.separation), others);
    acc += f * (i == 0 || i == steps ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return acc * h / 3.0;
}

}  // namespace ovfsim
