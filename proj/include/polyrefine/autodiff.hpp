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

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices.
//
// A `Var` is a handle to a graph node. Operations on Vars that require
// gradients record their inputs and a backward closure; operations whose
// inputs are all constants produce constants and record nothing, so
// inference builds no graph. `backward(loss)` runs the closures in reverse
// topological order and accumulates into each node's `grad`. Leaf nodes
// (parameters) keep accumulating across calls until `zero_grad`.
//
// Feature maps are stored as (H*W) x C matrices: one row per pixel.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "polyrefine/errors.hpp"

namespace polyrefine::ad {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Matrix&)> backward;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() : node_(std::make_shared<Node>()) {}
  explicit Var(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m));
  }

  const Matrix& value() const { return node_->value; }
  // Direct access for optimizers and checkpoint loading.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }

  void zero_grad() {
    if (node_->grad.size() != 0) node_->grad.setZero();
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op result. `backward` receives the upstream gradient and must
// push gradients into the input nodes that require them.
inline Var make_result(Matrix value, std::initializer_list<Var> inputs,
                       std::function<void(const Matrix&)> backward) {
  Var out(std::move(value));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& in : inputs) {
    if (in.requires_grad()) n.inputs.push_back(in.node());
  }
  n.backward = std::move(backward);
  return out;
}

inline Var make_result(Matrix value, const std::vector<Var>& inputs,
                       std::function<void(const Matrix&)> backward) {
  Var out(std::move(value));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& in : inputs) {
    if (in.requires_grad()) n.inputs.push_back(in.node());
  }
  n.backward = std::move(backward);
  return out;
}

inline void push_grad(const Var& v, const Matrix& g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

// Runs reverse-mode accumulation from a 1x1 root.
inline void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw ShapeError("backward: root must be 1x1");
  }
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers. Binary elementwise ops accept a right operand of the
// same shape, a 1 x cols row, a rows x 1 column or a 1 x 1 scalar.

namespace detail {

inline void check_broadcast(const Matrix& a, const Matrix& b, const char* op) {
  const bool ok = (a.rows() == b.rows() && a.cols() == b.cols()) ||
                  (b.rows() == 1 && b.cols() == a.cols()) ||
                  (b.cols() == 1 && b.rows() == a.rows()) ||
                  (b.rows() == 1 && b.cols() == 1);
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     " onto " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()));
  }
}

inline Matrix expand(const Matrix& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
  if (b.rows() == 1) return b.replicate(rows, 1);
  return b.replicate(1, cols);
}

inline Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) {
    Matrix s(1, 1);
    s(0, 0) = g.sum();
    return s;
  }
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  detail::check_broadcast(a.value(), b.value(), "add");
  Matrix out = a.value() + detail::expand(b.value(), a.rows(), a.cols());
  const Index br = b.rows(), bc = b.cols();
  return make_result(std::move(out), {a, b}, [a, b, br, bc](const Matrix& g) {
    push_grad(a, g);
    if (b.requires_grad()) push_grad(b, detail::reduce_to(g, br, bc));
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_broadcast(a.value(), b.value(), "sub");
  Matrix out = a.value() - detail::expand(b.value(), a.rows(), a.cols());
  const Index br = b.rows(), bc = b.cols();
  return make_result(std::move(out), {a, b}, [a, b, br, bc](const Matrix& g) {
    push_grad(a, g);
    if (b.requires_grad()) push_grad(b, -detail::reduce_to(g, br, bc));
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_broadcast(a.value(), b.value(), "mul");
  Matrix bx = detail::expand(b.value(), a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bx);
  const Index br = b.rows(), bc = b.cols();
  return make_result(std::move(out), {a, b},
                     [a, b, br, bc, bx = std::move(bx)](const Matrix& g) {
                       if (a.requires_grad()) push_grad(a, g.cwiseProduct(bx));
                       if (b.requires_grad()) {
                         push_grad(b, detail::reduce_to(
                                          g.cwiseProduct(a.value()), br, bc));
                       }
                     });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_broadcast(a.value(), b.value(), "div");
  Matrix bx = detail::expand(b.value(), a.rows(), a.cols());
  Matrix out = a.value().cwiseQuotient(bx);
  const Index br = b.rows(), bc = b.cols();
  return make_result(
      out, {a, b}, [a, b, br, bc, bx = std::move(bx), out](const Matrix& g) {
        if (a.requires_grad()) push_grad(a, g.cwiseQuotient(bx));
        if (b.requires_grad()) {
          Matrix gb = -g.cwiseProduct(out).cwiseQuotient(bx);
          push_grad(b, detail::reduce_to(gb, br, bc));
        }
      });
}

inline Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a},
                     [a, s](const Matrix& g) { push_grad(a, g * s); });
}

inline Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return make_result(std::move(out), {a},
                     [a](const Matrix& g) { push_grad(a, g); });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

// Elementwise unary op with derivative computed from input and output.
template <class F, class D>
Var unary(const Var& a, F&& f, D&& df) {
  Matrix out = a.value().unaryExpr(f);
  return make_result(out, {a}, [a, out, df](const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    const Matrix& x = a.value();
    for (Index i = 0; i < g.size(); ++i) {
      d.data()[i] = g.data()[i] * df(x.data()[i], out.data()[i]);
    }
    push_grad(a, d);
  });
}

inline Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        return cdf + x * pdf;
      });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

// Gradient passes where lo <= x <= hi (boundary values included).
inline Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Var minimum(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("minimum: shape mismatch");
  }
  Matrix out = a.value().cwiseMin(b.value());
  return make_result(std::move(out), {a, b}, [a, b](const Matrix& g) {
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    Matrix ga = Matrix::Zero(g.rows(), g.cols());
    Matrix gb = Matrix::Zero(g.rows(), g.cols());
    for (Index i = 0; i < g.size(); ++i) {
      (x.data()[i] <= y.data()[i] ? ga : gb).data()[i] = g.data()[i];
    }
    push_grad(a, ga);
    push_grad(b, gb);
  });
}

inline Var maximum(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("maximum: shape mismatch");
  }
  Matrix out = a.value().cwiseMax(b.value());
  return make_result(std::move(out), {a, b}, [a, b](const Matrix& g) {
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    Matrix ga = Matrix::Zero(g.rows(), g.cols());
    Matrix gb = Matrix::Zero(g.rows(), g.cols());
    for (Index i = 0; i < g.size(); ++i) {
      (x.data()[i] >= y.data()[i] ? ga : gb).data()[i] = g.data()[i];
    }
    push_grad(a, ga);
    push_grad(b, gb);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a}, [a, r, c](const Matrix& g) {
    push_grad(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / double(std::max<Index>(a.value().size(), 1)));
}

// Weighted sum of 1x1 Vars.
inline Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
  Matrix out = Matrix::Zero(1, 1);
  std::vector<Var> inputs;
  for (const auto& [w, v] : terms) {
    out(0, 0) += w * v.item();
    inputs.push_back(v);
  }
  return make_result(std::move(out), inputs, [terms](const Matrix& g) {
    for (const auto& [w, v] : terms) push_grad(v, g * w);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) push_grad(a, g * b.value().transpose());
    if (b.requires_grad()) push_grad(b, a.value().transpose() * g);
  });
}

inline Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {a}, [a](const Matrix& g) {
    push_grad(a, g.transpose());
  });
}

// Row-major reshape.
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a}, [a, r, c](const Matrix& g) {
    push_grad(a, Eigen::Map<const Matrix>(g.data(), r, c));
  });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.rows()) throw ShapeError("slice_rows");
  Matrix out = a.value().middleRows(start, count);
  const Index r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a},
                     [a, start, count, r, c](const Matrix& g) {
                       Matrix full = Matrix::Zero(r, c);
                       full.middleRows(start, count) = g;
                       push_grad(a, full);
                     });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.cols()) throw ShapeError("slice_cols");
  Matrix out = a.value().middleCols(start, count);
  const Index r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a},
                     [a, start, count, r, c](const Matrix& g) {
                       Matrix full = Matrix::Zero(r, c);
                       full.middleCols(start, count) = g;
                       push_grad(a, full);
                     });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  Index cols = 0;
  const Index rows = parts.empty() ? 0 : parts.front().rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), parts, [parts](const Matrix& g) {
    Index at = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) push_grad(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  Index rows = 0;
  const Index cols = parts.empty() ? 0 : parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), parts, [parts](const Matrix& g) {
    Index at = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) push_grad(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

inline Var gather_rows(const Var& a, const std::vector<Index>& idx) {
  Matrix out(Index(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(Index(i)) = a.value().row(idx[i]);
  const Index r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a}, [a, idx, r, c](const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(Index(i));
    push_grad(a, full);
  });
}

// Same value, no gradient path.
inline Var detach(const Var& a) { return Var(a.value()); }

// ---------------------------------------------------------------------------
// Normalization and attention primitives

inline Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(out, {a}, [a, out](const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double s = g.row(r).dot(out.row(r));
      d.row(r) = out.row(r).array() * (g.row(r).array() - s);
    }
    push_grad(a, d);
  });
}

// Row-wise layer normalization with affine 1 x cols `gamma` and `beta`.
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                           double eps = 1e-5) {
  const Index rows = x.rows(), cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols) {
    throw ShapeError("layer_norm_rows: affine size mismatch");
  }
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return make_result(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, cols](const Matrix& g) {
        if (gamma.requires_grad()) {
          push_grad(gamma, g.cwiseProduct(xhat).colwise().sum());
        }
        if (beta.requires_grad()) push_grad(beta, g.colwise().sum());
        if (x.requires_grad()) {
          Matrix gx = g.array().rowwise() * gamma.value().row(0).array();
          Matrix d(g.rows(), cols);
          for (Index r = 0; r < g.rows(); ++r) {
            const double m1 = gx.row(r).mean();
            const double m2 = gx.row(r).dot(xhat.row(r)) / double(cols);
            d.row(r) = inv_std(r) *
                       (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          push_grad(x, d);
        }
      });
}

// `a` stacks `blocks` matrices of shape (r x k); `b` stacks `blocks`
// matrices of shape (k x c). Returns the stacked (r x c) products.
inline Var block_matmul(const Var& a, const Var& b, Index blocks) {
  if (a.rows() % blocks != 0 || b.rows() % blocks != 0) {
    throw ShapeError("block_matmul: rows not divisible by block count");
  }
  const Index r = a.rows() / blocks, k = a.cols(), c = b.cols();
  if (b.rows() / blocks != k) throw ShapeError("block_matmul: inner mismatch");
  Matrix out(a.rows(), c);
  for (Index i = 0; i < blocks; ++i) {
    out.middleRows(i * r, r).noalias() =
        a.value().middleRows(i * r, r) * b.value().middleRows(i * k, k);
  }
  return make_result(std::move(out), {a, b}, [a, b, blocks, r, k](const Matrix& g) {
    if (a.requires_grad()) {
      Matrix ga(a.rows(), a.cols());
      for (Index i = 0; i < blocks; ++i) {
        ga.middleRows(i * r, r).noalias() =
            g.middleRows(i * r, r) * b.value().middleRows(i * k, k).transpose();
      }
      push_grad(a, ga);
    }
    if (b.requires_grad()) {
      Matrix gb(b.rows(), b.cols());
      for (Index i = 0; i < blocks; ++i) {
        gb.middleRows(i * k, k).noalias() =
            a.value().middleRows(i * r, r).transpose() * g.middleRows(i * r, r);
      }
      push_grad(b, gb);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution on (H*W) x C feature maps

struct ConvGeometry {
  Index height = 0, width = 0;  // input
  Index kernel = 3, stride = 1, pad = 1;

  Index out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  Index out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// Square-kernel 2-D convolution. `weight` is (kernel*kernel*Cin) x Cout with
// row index (ky*kernel + kx)*Cin + ci; `bias` is 1 x Cout.
inline Var conv2d(const Var& x, const ConvGeometry& geo, const Var& weight,
                  const Var& bias) {
  const Index cin = x.cols();
  const Index k = geo.kernel;
  if (x.rows() != geo.height * geo.width) throw ShapeError("conv2d: input size");
  if (weight.rows() != k * k * cin) throw ShapeError("conv2d: weight size");
  const Index ho = geo.out_height(), wo = geo.out_width();
  Matrix col = Matrix::Zero(ho * wo, k * k * cin);
  const Matrix& xv = x.value();
  for (Index oy = 0; oy < ho; ++oy) {
    for (Index ox = 0; ox < wo; ++ox) {
      const Index row = oy * wo + ox;
      for (Index ky = 0; ky < k; ++ky) {
        const Index iy = oy * geo.stride - geo.pad + ky;
        if (iy < 0 || iy >= geo.height) continue;
        for (Index kx = 0; kx < k; ++kx) {
          const Index ix = ox * geo.stride - geo.pad + kx;
          if (ix < 0 || ix >= geo.width) continue;
          col.row(row).segment((ky * k + kx) * cin, cin) =
              xv.row(iy * geo.width + ix);
        }
      }
    }
  }
  Matrix out = col * weight.value();
  out.rowwise() += bias.value().row(0);
  return make_result(
      std::move(out), {x, weight, bias},
      [x, weight, bias, geo, col = std::move(col), ho, wo, cin, k](const Matrix& g) {
        if (weight.requires_grad()) push_grad(weight, col.transpose() * g);
        if (bias.requires_grad()) push_grad(bias, g.colwise().sum());
        if (x.requires_grad()) {
          const Matrix dcol = g * weight.value().transpose();
          Matrix dx = Matrix::Zero(geo.height * geo.width, cin);
          for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox) {
              const Index row = oy * wo + ox;
              for (Index ky = 0; ky < k; ++ky) {
                const Index iy = oy * geo.stride - geo.pad + ky;
                if (iy < 0 || iy >= geo.height) continue;
                for (Index kx = 0; kx < k; ++kx) {
                  const Index ix = ox * geo.stride - geo.pad + kx;
                  if (ix < 0 || ix >= geo.width) continue;
                  dx.row(iy * geo.width + ix) +=
                      dcol.row(row).segment((ky * k + kx) * cin, cin);
                }
              }
            }
          }
          push_grad(x, dx);
        }
      });
}

// Nearest-neighbour 2x upsampling of an (H*W) x C map.
inline Var upsample_nearest2x(const Var& x, Index height, Index width) {
  if (x.rows() != height * width) throw ShapeError("upsample: input size");
  const Index c = x.cols();
  Matrix out(4 * height * width, c);
  for (Index y = 0; y < 2 * height; ++y) {
    for (Index xx = 0; xx < 2 * width; ++xx) {
      out.row(y * 2 * width + xx) = x.value().row((y / 2) * width + xx / 2);
    }
  }
  return make_result(std::move(out), {x}, [x, height, width, c](const Matrix& g) {
    Matrix d = Matrix::Zero(height * width, c);
    for (Index y = 0; y < 2 * height; ++y) {
      for (Index xx = 0; xx < 2 * width; ++xx) {
        d.row((y / 2) * width + xx / 2) += g.row(y * 2 * width + xx);
      }
    }
    push_grad(x, d);
  });
}

}  // namespace polyrefine::ad
