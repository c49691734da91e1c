// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over Tensor2. A graph is built
// fresh on every forward pass; backward() walks it once in reverse
// topological order. Only the primitives the models need are provided.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "amulet/tensor.hpp"

namespace amulet::ag {

struct Node {
  Tensor2 value;
  Tensor2 grad;  // allocated only when requires_grad
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  bool requires_grad = false;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor2& g) {
    if (!requires_grad) return;
    auto& d = grad.data();
    const auto& s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Tensor2 value) { return make_leaf(std::move(value), false); }
  static Var parameter(Tensor2 value) { return make_leaf(std::move(value), true); }
  static Var leaf(Tensor2 value, bool requires_grad) { return make_leaf(std::move(value), requires_grad); }

  const Tensor2& value() const { return node_->value; }
  /// Gradient with the value's shape; zero for untracked nodes.
  Tensor2 grad() const {
    if (node_->requires_grad) return node_->grad;
    return Tensor2(node_->value.rows(), node_->value.cols());
  }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const {
    if (node_->value.size() != 1) throw ShapeError("item: tensor is " + node_->value.shape_str());
    return node_->value[0];
  }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  static Var make_leaf(Tensor2 value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad = Tensor2(n->value.rows(), n->value.cols());
    return Var(std::move(n));
  }
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_op(const char* op, Tensor2 value, std::vector<Var> parents,
                   std::function<void(Node&)> backward_fn) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.ptr());
  }
  if (n->requires_grad) {
    n->grad = Tensor2(n->value.rows(), n->value.cols());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

// Sum whose result does not depend on the order of the inputs.
inline double ordered_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tensor2 out = amulet::matmul(a.value(), b.value());
  return detail::make_op("matmul", std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kernels::matmul_nt_acc(self.grad, pb.value, pa.grad);
    if (pb.requires_grad) kernels::matmul_tn_acc(pa.value, self.grad, pb.grad);
  });
}

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_op("add", std::move(out), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

/// x + bias broadcast over rows; bias is 1 x cols.
inline Var add_row(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_row: bias " + bias.value().shape_str() + " for input " + x.value().shape_str());
  }
  Tensor2 out = x.value();
  const std::size_t c = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out(r, j) += bias.value()[j];
  return detail::make_op("add_row", std::move(out), {x, bias}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    Node& pb = *self.parents[1];
    if (pb.requires_grad) {
      const std::size_t c = self.grad.cols();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) pb.grad[j] += self.grad(r, j);
    }
  });
}

inline Var scale(const Var& x, double c) {
  Tensor2 out = x.value();
  for (auto& v : out.data()) v *= c;
  return detail::make_op("scale", std::move(out), {x}, [c](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  });
}

/// x scaled by a tracked 1x1 scalar s.
inline Var scale_by(const Var& x, const Var& s) {
  if (s.value().size() != 1) throw ShapeError("scale_by: scalar expected, got " + s.value().shape_str());
  const double c = s.value()[0];
  Tensor2 out = x.value();
  for (auto& v : out.data()) v *= c;
  return detail::make_op("scale_by", std::move(out), {x, s}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    const double c = ps.value[0];
    if (px.requires_grad)
      for (std::size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += c * self.grad[i];
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
      ps.grad[0] += acc;
    }
  });
}

/// Elementwise product with a constant mask (dropout).
inline Var hadamard_const(const Var& x, const Tensor2& mask) {
  require_same_shape(x.value(), mask, "hadamard_const");
  Tensor2 out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_op("hadamard_const", std::move(out), {x}, [mask](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += mask[i] * self.grad[i];
  });
}

inline Var tanh(const Var& x) {
  Tensor2 out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return detail::make_op("tanh", std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      const double y = self.value[i];
      p.grad[i] += (1.0 - y * y) * self.grad[i];
    }
  });
}

inline Var transpose(const Var& x) {
  return detail::make_op("transpose", amulet::transpose(x.value()), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.rows(); ++i)
      for (std::size_t j = 0; j < self.grad.cols(); ++j) p.grad(j, i) += self.grad(i, j);
  });
}

/// Row-wise layer normalization with population variance; eps inside the sqrt.
inline Var layer_norm(const Var& z, const Var& gain, const Var& bias, double eps = 1e-5) {
  const std::size_t T = z.rows(), D = z.cols();
  if (D < 2) throw DegenerateInputError("layer_norm: feature dimension must be >= 2");
  if (!(eps > 0.0)) throw InputError("layer_norm: eps must be positive");
  if (gain.rows() != 1 || gain.cols() != D || bias.rows() != 1 || bias.cols() != D) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(D));
  }
  auto xhat = std::make_shared<Tensor2>(T, D);
  auto inv_std = std::make_shared<std::vector<double>>(T);
  Tensor2 out(T, D);
  const auto& g = gain.value();
  const auto& b = bias.value();
  for (std::size_t r = 0; r < T; ++r) {
    auto row = z.value().row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)(r, j) = xh;
      out(r, j) = g[j] * xh + b[j];
    }
  }
  return detail::make_op("layer_norm", std::move(out), {z, gain, bias}, [xhat, inv_std](Node& self) {
    Node& pz = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const std::size_t T = self.grad.rows(), D = self.grad.cols();
    const double invD = 1.0 / static_cast<double>(D);
    std::vector<double> dxh(D);
    for (std::size_t r = 0; r < T; ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        const double gy = self.grad(r, j);
        if (pg.requires_grad) pg.grad[j] += gy * (*xhat)(r, j);
        if (pb.requires_grad) pb.grad[j] += gy;
        dxh[j] = gy * pg.value[j];
        m1 += dxh[j];
        m2 += dxh[j] * (*xhat)(r, j);
      }
      if (!pz.requires_grad) continue;
      m1 *= invD;
      m2 *= invD;
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < D; ++j) pz.grad(r, j) += is * (dxh[j] - m1 - (*xhat)(r, j) * m2);
    }
  });
}

/// Softmax of each row (max-subtracted). Row sums are accumulated in sorted
/// order, making the result independent of column ordering.
inline Var softmax(const Var& v) {
  Tensor2 out = v.value();
  const std::size_t N = out.cols();
  if (N == 0) throw ShapeError("softmax: empty row");
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> e(N);
    for (std::size_t j = 0; j < N; ++j) e[j] = std::exp(row[j] - mx);
    const double s = detail::ordered_sum(e);
    for (std::size_t j = 0; j < N; ++j) row[j] = e[j] / s;
  }
  return detail::make_op("softmax", std::move(out), {v}, [](Node& self) {
    Node& p = *self.parents[0];
    const std::size_t N = self.value.cols();
    std::vector<double> prod(N);
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      for (std::size_t j = 0; j < N; ++j) prod[j] = self.value(r, j) * self.grad(r, j);
      const double dot = detail::ordered_sum(prod);
      for (std::size_t j = 0; j < N; ++j) p.grad(r, j) += self.value(r, j) * (self.grad(r, j) - dot);
    }
  });
}

/// Averages each of `segments` equal-length row blocks: (S*L) x D -> S x D.
inline Var segment_mean(const Var& x, std::size_t segments) {
  const std::size_t rows = x.rows(), D = x.cols();
  if (segments == 0 || rows % segments != 0) {
    throw ShapeError("segment_mean: " + std::to_string(rows) + " rows not divisible into " +
                     std::to_string(segments) + " segments");
  }
  const std::size_t L = rows / segments;
  Tensor2 out(segments, D);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t t = 0; t < L; ++t) {
      auto row = x.value().row(s * L + t);
      for (std::size_t j = 0; j < D; ++j) out(s, j) += row[j];
    }
    for (std::size_t j = 0; j < D; ++j) out(s, j) /= static_cast<double>(L);
  }
  return detail::make_op("segment_mean", std::move(out), {x}, [L](Node& self) {
    Node& p = *self.parents[0];
    const std::size_t D = self.grad.cols();
    const double inv = 1.0 / static_cast<double>(L);
    for (std::size_t s = 0; s < self.grad.rows(); ++s)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t j = 0; j < D; ++j) p.grad(s * L + t, j) += self.grad(s, j) * inv;
  });
}

inline Var mean_rows(const Var& x) { return segment_mean(x, 1); }

/// Element `index` (row-major) as a 1x1 node.
inline Var pick(const Var& v, std::size_t index) {
  if (index >= v.value().size()) throw ShapeError("pick: index out of range");
  return detail::make_op("pick", Tensor2(1, 1, v.value()[index]), {v}, [index](Node& self) {
    self.parents[0]->grad[index] += self.grad[0];
  });
}

/// Columns `idx` of every row, in the given order.
inline Var select_cols(const Var& x, std::vector<std::size_t> idx) {
  for (auto j : idx) {
    if (j >= x.cols()) throw ShapeError("select_cols: column " + std::to_string(j) + " out of range");
  }
  Tensor2 out(x.rows(), idx.size());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < idx.size(); ++j) out(r, j) = x.value()(r, idx[j]);
  return detail::make_op("select_cols", std::move(out), {x}, [idx](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t j = 0; j < idx.size(); ++j) p.grad(r, idx[j]) += self.grad(r, j);
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make_op("sum", Tensor2(1, 1, s), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (auto& g : p.grad.data()) g += self.grad[0];
  });
}

/// Mean over rows of -log softmax(logits[r])[labels[r]].
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const std::size_t B = logits.rows(), C = logits.cols();
  if (labels.size() != B) throw ShapeError("cross_entropy: label count does not match logits rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) {
      throw InputError("cross_entropy: invalid label " + std::to_string(l));
    }
  }
  auto probs = std::make_shared<Tensor2>(B, C);
  double total = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    auto row = logits.value().row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < C; ++j) (*probs)(r, j) = std::exp(row[j] - lse);
    total += lse - row[labels[r]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_op("cross_entropy", Tensor2(1, 1, total / static_cast<double>(B)), {logits},
                         [probs, lab](Node& self) {
                           Node& p = *self.parents[0];
                           const double g = self.grad[0] / static_cast<double>(lab.size());
                           for (std::size_t r = 0; r < lab.size(); ++r)
                             for (std::size_t j = 0; j < probs->cols(); ++j) {
                               const double t = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
                               p.grad(r, j) += g * ((*probs)(r, j) - t);
                             }
                         });
}

inline Var cross_entropy(const Var& logits, int label) {
  const int labels[1] = {label};
  return cross_entropy(logits, std::span<const int>(labels, 1));
}

/// Accumulates d(root)/d(node) into every tracked node reachable from root.
inline void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + root.value().shape_str());
  }
  if (!root.requires_grad()) return;

  // Iterative DFS post-order; a node seen again while on the stack is a cycle.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  state[&root.node()] = 1;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (!p->requires_grad) continue;
      auto it = state.find(p);
      if (it == state.end()) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      } else if (it->second == 1) {
        throw InternalError("backward: cycle detected in computation graph");
      }
    } else {
      state[n] = 2;
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node().grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace amulet::ag
