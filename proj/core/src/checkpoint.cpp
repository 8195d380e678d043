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

#include "ovfsim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include <json.hpp>

#include "ovfsim/error.hpp"

namespace ovfsim {
namespace {

constexpr char kMagic[8] = {'O', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};

static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw TruncatedError("checkpoint: truncated file");
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(to_json(checkpoint.spec));
  w.str(checkpoint.metadata_json);
  w.u32(static_cast<std::uint32_t>(checkpoint.params.size()));
  for (const auto& e : checkpoint.params) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.u64(d);
    for (Real v : e.tensor.data()) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(w.buffer().data()),
            static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path.string() + "'");
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  char magic[8];
  try {
    r.bytes(magic, sizeof magic);
  } catch (const TruncatedError&) {
    throw BadMagicError("checkpoint: '" + path.string() + "' is not an ovfsim checkpoint");
  }
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw BadMagicError("checkpoint: '" + path.string() + "' is not an ovfsim checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.spec = model_spec_from_json(r.str());
  ckpt.metadata_json = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint: parameter '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count_left = r.remaining() / sizeof(Real);
    for (auto& d : shape) {
      d = r.u64();
      // Reject shapes larger than the bytes left before allocating.
      if (d != 0 && d > count_left) throw TruncatedError("checkpoint: truncated file");
      if (d != 0) count_left /= d;
    }
    std::vector<Real> data(numel(shape));
    for (Real& v : data) v = r.f64();
    ckpt.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw IoError("checkpoint: trailing bytes after parameter table");

  // Every parameter the architecture needs must be present with the right shape.
  Rng probe(0);
  const ParamSet expected = build(ckpt.spec, probe);
  for (const auto& e : expected) {
    if (!ckpt.params.contains(e.name) || ckpt.params.at(e.name).shape() != e.tensor.shape()) {
      throw IoError("checkpoint: parameter '" + e.name + "' missing or misshaped");
    }
  }
  return ckpt;
}

}  // namespace ovfsim
