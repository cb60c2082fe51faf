/* Copyright 2026 The polyrefine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "polyrefine/autodiff.hpp"

namespace polyrefine::nn {

using ad::Index;
using ad::Matrix;
using ad::Var;

// Portable deterministic generator: identical streams on every platform
// (std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + int(engine_() % span);
  }
  double normal() {
    // Box-Muller; one value per call keeps the stream simple.
    const double u1 = std::max(uniform(), 0x1.0p-60);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

inline Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double bound) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

inline Var parameter(Matrix init) { return Var(std::move(init), true); }

struct NamedParameter {
  std::string name;
  Var var;
};
using ParameterList = std::vector<NamedParameter>;

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  Linear() = default;
  Linear(Rng& rng, Index in, Index out) {
    const double bound = 1.0 / std::sqrt(double(in));
    weight = parameter(uniform_matrix(rng, in, out, bound));
    bias = parameter(uniform_matrix(rng, 1, out, bound));
  }

  Var operator()(const Var& x) const {
    return ad::add(ad::matmul(x, weight), bias);
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  void zero() {
    weight.mutable_value().setZero();
    bias.mutable_value().setZero();
  }
};

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(Index dim)
      : gamma(parameter(Matrix::Ones(1, dim))),
        beta(parameter(Matrix::Zero(1, dim))) {}

  Var operator()(const Var& x) const {
    return ad::layer_norm_rows(x, gamma, beta);
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

// Linear -> ReLU -> Linear -> ReLU -> Linear.
struct Mlp3 {
  Linear l0, l1, l2;

  Mlp3() = default;
  Mlp3(Rng& rng, Index in, Index hidden, Index out)
      : l0(rng, in, hidden), l1(rng, hidden, hidden), l2(rng, hidden, out) {}

  Var operator()(const Var& x) const {
    return l2(ad::relu(l1(ad::relu(l0(x)))));
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    l0.collect(prefix + ".0", out);
    l1.collect(prefix + ".1", out);
    l2.collect(prefix + ".2", out);
  }
};

// Linear -> ReLU -> Linear feed-forward block.
struct FeedForward {
  Linear l0, l1;

  FeedForward() = default;
  FeedForward(Rng& rng, Index dim, Index hidden)
      : l0(rng, dim, hidden), l1(rng, hidden, dim) {}

  Var operator()(const Var& x) const { return l1(ad::relu(l0(x))); }

  void collect(const std::string& prefix, ParameterList& out) const {
    l0.collect(prefix + ".0", out);
    l1.collect(prefix + ".1", out);
  }
};

// Multi-head scaled dot-product self-attention over the rows of an
// (tokens x dim) matrix, returned with its residual: x + Attn(x).
struct SelfAttention {
  Linear q, k, v, o;
  Index heads = 1;

  SelfAttention() = default;
  SelfAttention(Rng& rng, Index dim, Index num_heads)
      : q(rng, dim, dim), k(rng, dim, dim), v(rng, dim, dim), o(rng, dim, dim),
        heads(num_heads) {
    if (dim % num_heads != 0) {
      throw ShapeError("SelfAttention: dim " + std::to_string(dim) +
                       " not divisible by " + std::to_string(num_heads) +
                       " heads");
    }
  }

  // Attention output without the residual.
  Var attend(const Var& x) const {
    const Index dim = x.cols();
    const Index dh = dim / heads;
    const Var qx = q(x), kx = k(x), vx = v(x);
    std::vector<Var> per_head;
    per_head.reserve(std::size_t(heads));
    const double s = 1.0 / std::sqrt(double(dh));
    for (Index h = 0; h < heads; ++h) {
      const Var qh = ad::slice_cols(qx, h * dh, dh);
      const Var kh = ad::slice_cols(kx, h * dh, dh);
      const Var vh = ad::slice_cols(vx, h * dh, dh);
      const Var att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), s));
      per_head.push_back(ad::matmul(att, vh));
    }
    return o(heads == 1 ? per_head.front() : ad::concat_cols(per_head));
  }

  Var operator()(const Var& x) const { return ad::add(x, attend(x)); }

  void collect(const std::string& prefix, ParameterList& out) const {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
  }
};

struct Conv2d {
  Var weight;  // (k*k*in) x out
  Var bias;
  Index kernel = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(Rng& rng, Index in, Index out, Index k, Index s, Index p)
      : kernel(k), stride(s), pad(p) {
    // He-uniform, suited to the ReLU that follows.
    const double bound = std::sqrt(6.0 / double(k * k * in));
    weight = parameter(uniform_matrix(rng, k * k * in, out, bound));
    bias = parameter(Matrix::Zero(1, out));
  }

  ad::ConvGeometry geometry(Index h, Index w) const {
    return {h, w, kernel, stride, pad};
  }

  Var operator()(const Var& x, Index h, Index w) const {
    return ad::conv2d(x, geometry(h, w), weight, bias);
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace polyrefine::nn
