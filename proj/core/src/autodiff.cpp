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

#include "ovfsim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "gemm.hpp"
#include "ovfsim/error.hpp"

namespace ovfsim {

// ---------------------------------------------------------------------------
// Var / BackwardContext

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("use of an empty Var");
  return graph_->nodes_[id_].value;
}

bool Var::requires_grad() const { return graph_ && graph_->nodes_[id_].requires_grad; }

const Tensor& BackwardContext::output() const { return graph_.nodes_[node_].value; }

const Tensor& BackwardContext::input(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs.at(i)].value;
}

bool BackwardContext::needs_grad(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs.at(i)].requires_grad;
}

std::span<Real> BackwardContext::input_grad(std::size_t i) {
  const std::size_t id = graph_.nodes_[node_].inputs.at(i);
  auto& g = graph_.grads_[id];
  if (g.empty()) g.assign(graph_.nodes_[id].value.size(), Real{0});
  return g;
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::parameter(Tensor& param) {
  Node node;
  node.value = param;
  node.value.clear_grad();
  if (grad_enabled()) {
    node.param = &param;
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::check_owner(Var v) const {
  if (!v.valid() || v.graph_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("operand does not belong to this graph");
  }
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (backward_done_) throw ContractError("graph already differentiated; build a new one");
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owner(in);
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  check_owner(loss);
  if (backward_done_) throw ContractError("backward() already ran on this graph");
  if (nodes_[loss.id_].value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        to_string(nodes_[loss.id_].value.shape()));
  }
  backward_done_ = true;
  visited_ = 0;
  grads_.assign(nodes_.size(), {});
  grads_[loss.id_].assign(1, Real{1});

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    auto& g = grads_[id];
    if (!node.requires_grad || g.empty()) continue;
    ++visited_;
    if (node.param) {
      auto dst = node.param->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    } else if (node.backward) {
      BackwardContext ctx(*this, id, g);
      node.backward(ctx);
    }
    // Release as we go; each node is visited exactly once.
    std::vector<Real>().swap(g);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {

Graph& common_graph(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError("use of an empty Var");
    if (g && &v.graph() != g) throw ContractError("operands belong to different graphs");
    g = &v.graph();
  }
  return *g;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void check_labels(const char* op, std::size_t batch, std::size_t classes,
                  std::span<const int> labels) {
  if (labels.size() != batch) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ValidationError(std::string(op) + ": label " + std::to_string(label) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = common_graph({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(av.shape()) + " by " +
                         to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  detail::gemm(detail::Trans::kNo, detail::Trans::kNo, m, n, k, av.data().data(),
               bv.data().data(), out.data().data(), false);
  return g.record(std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const Real* dc = ctx.grad_output().data();
    if (ctx.needs_grad(0)) {
      // dA = dC . B^T
      detail::gemm(detail::Trans::kNo, detail::Trans::kYes, m, k, n, dc,
                   ctx.input(1).data().data(), ctx.input_grad(0).data(), true);
    }
    if (ctx.needs_grad(1)) {
      // dB = A^T . dC
      detail::gemm(detail::Trans::kYes, detail::Trans::kNo, k, n, m, ctx.input(0).data().data(),
                   dc, ctx.input_grad(1).data(), true);
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t rows() const { return n * oh * ow; }
};

// One sample: cols[(ci, ky, kx), (y, x)], i.e. patch x spatial, with rows
// `ld` apart so several samples can sit side by side.
void im2col(const ConvGeometry& geo, const Real* in, Real* cols, std::size_t ld) {
  for (std::size_t ci = 0; ci < geo.c; ++ci) {
    const Real* plane = in + ci * geo.h * geo.w;
    for (std::size_t ky = 0; ky < geo.kh; ++ky) {
      for (std::size_t kx = 0; kx < geo.kw; ++kx) {
        Real* row = cols + ((ci * geo.kh + ky) * geo.kw + kx) * ld;
        for (std::size_t y = 0; y < geo.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * geo.stride + ky) - static_cast<std::ptrdiff_t>(geo.pad);
          Real* dst = row + y * geo.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.h)) {
            std::fill(dst, dst + geo.ow, Real{0});
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * geo.w;
          if (geo.stride == 1 && geo.pad == 0) {
            std::copy(src + kx, src + kx + geo.ow, dst);
            continue;
          }
          for (std::size_t x = 0; x < geo.ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * geo.stride + kx) - static_cast<std::ptrdiff_t>(geo.pad);
            dst[x] = ix >= 0 && ix < static_cast<std::ptrdiff_t>(geo.w) ? src[ix] : Real{0};
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& geo, const Real* cols, std::size_t ld, Real* din) {
  for (std::size_t ci = 0; ci < geo.c; ++ci) {
    Real* plane = din + ci * geo.h * geo.w;
    for (std::size_t ky = 0; ky < geo.kh; ++ky) {
      for (std::size_t kx = 0; kx < geo.kw; ++kx) {
        const Real* row = cols + ((ci * geo.kh + ky) * geo.kw + kx) * ld;
        for (std::size_t y = 0; y < geo.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * geo.stride + ky) - static_cast<std::ptrdiff_t>(geo.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.h)) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * geo.w;
          for (std::size_t x = 0; x < geo.ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * geo.stride + kx) - static_cast<std::ptrdiff_t>(geo.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(geo.w)) dst[ix] += row[y * geo.ow + x];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, Conv2dOptions options) {
  Graph& g = common_graph({input, kernel});
  const Tensor& in = input.value();
  const Tensor& k = kernel.value();
  if (in.rank() != 4 || k.rank() != 4 || in.dim(1) != k.dim(1)) {
    throw DimensionError("conv2d: input " + to_string(in.shape()) + " incompatible with kernel " +
                         to_string(k.shape()));
  }
  if (options.stride == 0) throw ValidationError("conv2d: stride must be positive");
  ConvGeometry geo{in.dim(0), in.dim(1), in.dim(2), in.dim(3), k.dim(0), k.dim(2),
                   k.dim(3),  options.stride, options.padding, 0, 0};
  if (geo.kh > geo.h + 2 * geo.pad || geo.kw > geo.w + 2 * geo.pad) {
    throw DimensionError("conv2d: kernel " + to_string(k.shape()) + " larger than padded input " +
                         to_string(in.shape()) + " (padding " + std::to_string(geo.pad) + ")");
  }
  geo.oh = (geo.h + 2 * geo.pad - geo.kh) / geo.stride + 1;
  geo.ow = (geo.w + 2 * geo.pad - geo.kw) / geo.stride + 1;

  const std::size_t spatial = geo.oh * geo.ow;
  const std::size_t in_plane = geo.c * geo.h * geo.w;
  const std::size_t per_sample = geo.patch() * spatial;
  const bool keep = input.requires_grad() || kernel.requires_grad();
  // Samples are unrolled in groups into cols[patch, group * spatial] so each
  // group is a single GEMM. With gradients the whole batch is one group and
  // its columns are kept for backward.
  constexpr std::size_t kMaxGroupCols = std::size_t{1} << 16;
  const std::size_t group = keep ? geo.n : std::clamp<std::size_t>(kMaxGroupCols / per_sample, 1, geo.n);
  std::shared_ptr<Real[]> cols(new Real[group * per_sample]);
  std::unique_ptr<Real[]> prod(new Real[geo.o * group * spatial]);
  Tensor out({geo.n, geo.o, geo.oh, geo.ow});
  for (std::size_t b0 = 0; b0 < geo.n; b0 += group) {
    const std::size_t g = std::min(group, geo.n - b0);
    const std::size_t ld = g * spatial;
    for (std::size_t b = 0; b < g; ++b) im2col(geo, in.data().data() + (b0 + b) * in_plane, cols.get() + b * spatial, ld);
    detail::gemm(detail::Trans::kNo, detail::Trans::kNo, geo.o, ld, geo.patch(), k.data().data(), cols.get(),
                 prod.get(), false);
    // prod[o, (b, s)] -> out[b, o, s]
    for (std::size_t b = 0; b < g; ++b) {
      for (std::size_t oc = 0; oc < geo.o; ++oc) {
        const Real* src = prod.get() + oc * ld + b * spatial;
        std::copy(src, src + spatial, out.data().data() + ((b0 + b) * geo.o + oc) * spatial);
      }
    }
  }
  if (!keep) cols.reset();

  return g.record(std::move(out), {input, kernel}, [geo, cols, in_plane](BackwardContext& ctx) {
    const std::size_t spatial = geo.oh * geo.ow;
    const std::size_t ld = geo.n * spatial;
    const auto dout = ctx.grad_output();
    // dout[b, o, s] -> dprod[o, (b, s)]
    std::unique_ptr<Real[]> dprod(new Real[geo.o * ld]);
    for (std::size_t b = 0; b < geo.n; ++b) {
      for (std::size_t oc = 0; oc < geo.o; ++oc) {
        const Real* src = dout.data() + (b * geo.o + oc) * spatial;
        std::copy(src, src + spatial, dprod.get() + oc * ld + b * spatial);
      }
    }
    if (ctx.needs_grad(1)) {
      // dK[o x patch] += dprod . cols^T
      detail::gemm(detail::Trans::kNo, detail::Trans::kYes, geo.o, geo.patch(), ld, dprod.get(), cols.get(),
                   ctx.input_grad(1).data(), true);
    }
    if (ctx.needs_grad(0)) {
      std::unique_ptr<Real[]> dcols(new Real[geo.patch() * ld]);
      detail::gemm(detail::Trans::kYes, detail::Trans::kNo, geo.patch(), ld, geo.o, ctx.input(1).data().data(),
                   dprod.get(), dcols.get(), false);
      for (std::size_t b = 0; b < geo.n; ++b) {
        col2im_add(geo, dcols.get() + b * spatial, ld, ctx.input_grad(0).data() + b * in_plane);
      }
    }
  });
}

Var relu(Var x) {
  Graph& g = common_graph({x});
  Tensor out = x.value();
  for (Real& v : out.data()) v = v > 0 ? v : Real{0};
  return g.record(std::move(out), {x}, [](BackwardContext& ctx) {
    const auto in = ctx.input(0).data();
    const auto dout = ctx.grad_output();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (in[i] > 0) dx[i] += dout[i];
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = common_graph({a, b});
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return g.record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.needs_grad(k)) continue;
      auto d = ctx.input_grad(k);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i];
    }
  });
}

Var scale(Var x, Real c) {
  Graph& g = common_graph({x});
  Tensor out = x.value();
  for (Real& v : out.data()) v *= c;
  return g.record(std::move(out), {x}, [c](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * dout[i];
  });
}

Var bias_add(Var x, Var bias) {
  Graph& g = common_graph({x, bias});
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() < 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    throw DimensionError("bias_add: bias " + to_string(bv.shape()) + " does not match " +
                         to_string(xv.shape()));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), inner = xv.size() / (n * c);
  Tensor out = xv;
  auto ov = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real* p = ov.data() + (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bv[ch];
    }
  }
  return g.record(std::move(out), {x, bias}, [n, c, inner](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    if (ctx.needs_grad(0)) {
      auto dx = ctx.input_grad(0);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
    }
    if (ctx.needs_grad(1)) {
      auto db = ctx.input_grad(1);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Real* p = dout.data() + (b * c + ch) * inner;
          Real acc = 0;
          for (std::size_t i = 0; i < inner; ++i) acc += p[i];
          db[ch] += acc;
        }
      }
    }
  });
}

Var flatten(Var x) {
  Graph& g = common_graph({x});
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.dim(0) == 0) throw DimensionError("flatten: empty batch");
  const std::size_t n = xv.dim(0);
  return g.record(xv.reshaped({n, xv.size() / n}), {x}, [](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
  });
}

Var maxpool2d(Var x, std::size_t window) {
  Graph& g = common_graph({x});
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw DimensionError("maxpool2d: expected 4-d input, got " + to_string(xv.shape()));
  if (window == 0 || window > xv.dim(2) || window > xv.dim(3)) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " does not fit " +
                         to_string(xv.shape()));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  Tensor out({n, c, oh, ow});
  const bool keep = x.requires_grad();
  auto argmax_idx = std::make_shared<std::vector<std::size_t>>(keep ? out.size() : 0);
  const auto in = xv.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const Real* src = in.data() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = (y * window) * w + xo * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (y * window + dy) * w + xo * window + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + y) * ow + xo;
        out[o] = src[best];
        if (keep) (*argmax_idx)[o] = plane * h * w + best;
      }
    }
  }
  return g.record(std::move(out), {x}, [argmax_idx](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    auto dx = ctx.input_grad(0);
    for (std::size_t o = 0; o < dout.size(); ++o) dx[(*argmax_idx)[o]] += dout[o];
  });
}

Var linear_combination(std::span<const std::pair<Real, Var>> terms) {
  if (terms.empty()) throw ValidationError("linear_combination: no terms");
  Graph& g = common_graph({terms.front().second});
  std::vector<Var> inputs;
  std::vector<Real> coefs;
  inputs.reserve(terms.size());
  const Tensor& first = terms.front().second.value();
  Tensor out(first.shape());
  auto ov = out.data();
  for (const auto& [coef, var] : terms) {
    common_graph({terms.front().second, var});
    require_same_shape("linear_combination", first, var.value());
    const auto tv = var.value().data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += coef * tv[i];
    inputs.push_back(var);
    coefs.push_back(coef);
  }
  return g.record(std::move(out), std::move(inputs), [coefs](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    for (std::size_t k = 0; k < coefs.size(); ++k) {
      if (!ctx.needs_grad(k)) continue;
      auto d = ctx.input_grad(k);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += coefs[k] * dout[i];
    }
  });
}

Var sum(Var x) {
  Graph& g = common_graph({x});
  Real total = 0;
  for (Real v : x.value().data()) total += v;
  return g.record(Tensor::scalar(total), {x}, [](BackwardContext& ctx) {
    const Real d = ctx.grad_output()[0];
    auto dx = ctx.input_grad(0);
    for (Real& v : dx) v += d;
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax: expected [n x classes], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const Real* src = logits.data().data() + r * k;
    Real* dst = out.data().data() + r * k;
    const Real mx = *std::max_element(src, src + k);
    Real z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (dst[j] = std::exp(src[j] - mx));
    for (std::size_t j = 0; j < k; ++j) dst[j] /= z;
  }
  return out;
}

Real log_softmax_at(std::span<const Real> row, std::size_t index) {
  const Real mx = *std::max_element(row.begin(), row.end());
  Real z = 0;
  for (Real v : row) z += std::exp(v - mx);
  return row[index] - mx - std::log(z);
}

std::size_t argmax(std::span<const Real> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

Var softmax(Var logits) {
  Graph& g = common_graph({logits});
  Tensor out = softmax_rows(logits.value());
  return g.record(std::move(out), {logits}, [](BackwardContext& ctx) {
    const Tensor& p = ctx.output();
    const std::size_t n = p.dim(0), k = p.dim(1);
    const auto dout = ctx.grad_output();
    auto dx = ctx.input_grad(0);
    for (std::size_t r = 0; r < n; ++r) {
      Real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += dout[r * k + j] * p[r * k + j];
      for (std::size_t j = 0; j < k; ++j) dx[r * k + j] += p[r * k + j] * (dout[r * k + j] - dot);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = common_graph({logits});
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw DimensionError("softmax_cross_entropy: expected [n x classes], got " + to_string(lv.shape()));
  const std::size_t n = lv.dim(0), k = lv.dim(1);
  check_labels("softmax_cross_entropy", n, k, labels);
  Real loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    loss -= log_softmax_at(lv.data().subspan(r * k, k), static_cast<std::size_t>(labels[r]));
  }
  loss /= static_cast<Real>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return g.record(Tensor::scalar(loss), {logits}, [lab = std::move(lab), n, k](BackwardContext& ctx) {
    const Real d = ctx.grad_output()[0] / static_cast<Real>(n);
    const Tensor p = softmax_rows(ctx.input(0));
    auto dx = ctx.input_grad(0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const Real onehot = static_cast<std::size_t>(lab[r]) == j ? Real{1} : Real{0};
        dx[r * k + j] += d * (p[r * k + j] - onehot);
      }
    }
  });
}

Var probability_nll(Var probs, std::span<const int> labels, Real normaliser, Real floor) {
  Graph& g = common_graph({probs});
  const Tensor& pv = probs.value();
  if (pv.rank() != 2) throw DimensionError("probability_nll: expected [n x classes], got " + to_string(pv.shape()));
  if (!(normaliser > 0)) throw ValidationError("probability_nll: normaliser must be positive");
  const std::size_t n = pv.dim(0), k = pv.dim(1);
  check_labels("probability_nll", n, k, labels);
  Real loss = 0;
  std::vector<std::size_t> picked(n);
  for (std::size_t r = 0; r < n; ++r) {
    picked[r] = r * k + static_cast<std::size_t>(labels[r]);
    loss -= std::log(std::max(pv[picked[r]] / normaliser, floor));
  }
  loss /= static_cast<Real>(n);
  return g.record(Tensor::scalar(loss), {probs},
                  [picked = std::move(picked), n, normaliser, floor](BackwardContext& ctx) {
                    const Real d = ctx.grad_output()[0] / static_cast<Real>(n);
                    const Tensor& p = ctx.input(0);
                    auto dx = ctx.input_grad(0);
                    for (std::size_t idx : picked) {
                      const Real q = p[idx] / normaliser;
                      if (q > floor) dx[idx] -= d / p[idx];
                    }
                  });
}

Var straight_through(Var x, Tensor replacement) {
  Graph& g = common_graph({x});
  require_same_shape("straight_through", x.value(), replacement);
  return g.record(std::move(replacement), {x}, [](BackwardContext& ctx) {
    const auto dout = ctx.grad_output();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
  });
}

}  // namespace ovfsim
