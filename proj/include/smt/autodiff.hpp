// Copyright 2026  smt-lab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

#include "smt/types.hpp"

namespace smt::ad {

// Reverse-mode differentiation over dense row-major matrices. A Tape owns
// every intermediate value; Var is a handle into it. Ops push a node holding
// the forward value and a closure that scatters the node's gradient into its
// inputs. Everything runs in push order, so results are deterministic.

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Mat<Scalar>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;

  /// With `recording` false no closures or gradients are kept (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<Scalar> constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Differentiable input owned by the tape.
  Var<Scalar> leaf(Matrix value) { return push(std::move(value), recording_, nullptr); }

  /// Differentiable external parameter, bound once per key.
  Var<Scalar> param(const Matrix& value, int key) {
    if (auto it = params_.find(key); it != params_.end()) return {this, it->second};
    Node n;
    n.external = &value;
    n.requires_grad = recording_;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    params_.emplace(key, id);
    return {this, id};
  }

  /// Node id of a bound parameter, or -1.
  int param_node(int key) const {
    auto it = params_.find(key);
    return it == params_.end() ? -1 : it->second;
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Adds `g` into the gradient of `id` (no-op for constants).
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Mutable gradient buffer, zero-initialized on first access.
  Matrix& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      const auto& v = value(id);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  /// Pushes an op result. `backward` receives the node's own gradient.
  Var<Scalar> push(Matrix value, bool requires_grad,
                   std::function<void(const Matrix& grad)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = recording_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Back-propagates from a 1x1 root.
  void backward(Var<Scalar> root) {
    if (!recording_) throw Error("InvalidArgument", "backward on a non-recording tape");
    if (root.rows() != 1 || root.cols() != 1) throw Error("InvalidArgument", "root must be 1x1");
    accumulate(root.id, Matrix::Constant(1, 1, Scalar(1)));
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.grad.size() > 0) n.backward(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(const Matrix&)> backward;
  };

  bool recording_;
  std::deque<Node> nodes_;
  std::unordered_map<int, int> params_;
};

namespace detail {
template <typename Scalar>
bool any_grad(std::initializer_list<Var<Scalar>> vars) {
  for (const auto& v : vars)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a * b
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto* t = a.tape;
  Mat<Scalar> out;
  out.noalias() = a.value() * b.value();
  return t->push(std::move(out), detail::any_grad({a, b}), [t, a, b](const Mat<Scalar>& g) {
    if (t->requires_grad(a.id)) t->accumulate(a.id, g * b.value().transpose());
    if (t->requires_grad(b.id)) t->accumulate(b.id, a.value().transpose() * g);
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  auto* t = a.tape;
  Mat<Scalar> out;
  out.noalias() = a.value() * b.value().transpose();
  return t->push(std::move(out), detail::any_grad({a, b}), [t, a, b](const Mat<Scalar>& g) {
    if (t->requires_grad(a.id)) t->accumulate(a.id, g * b.value());
    if (t->requires_grad(b.id)) t->accumulate(b.id, g.transpose() * a.value());
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  auto* t = a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("ShapeMismatch", "add");
  return t->push(a.value() + b.value(), detail::any_grad({a, b}),
                 [t, a, b](const Mat<Scalar>& g) {
                   t->accumulate(a.id, g);
                   t->accumulate(b.id, g);
                 });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}

/// Adds a 1 x n row to every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row) {
  auto* t = a.tape;
  Mat<Scalar> out = a.value();
  out.rowwise() += row.value().row(0);
  return t->push(std::move(out), detail::any_grad({a, row}), [t, a, row](const Mat<Scalar>& g) {
    t->accumulate(a.id, g);
    if (t->requires_grad(row.id)) t->accumulate(row.id, g.colwise().sum());
  });
}

/// Multiplies every row of a elementwise by a 1 x n row.
template <typename Scalar>
Var<Scalar> mul_row(Var<Scalar> a, Var<Scalar> row) {
  auto* t = a.tape;
  Mat<Scalar> out = a.value().array().rowwise() * row.value().row(0).array();
  return t->push(std::move(out), detail::any_grad({a, row}), [t, a, row](const Mat<Scalar>& g) {
    if (t->requires_grad(a.id))
      t->accumulate(a.id, (g.array().rowwise() * row.value().row(0).array()).matrix());
    if (t->requires_grad(row.id))
      t->accumulate(row.id, g.cwiseProduct(a.value()).colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  auto* t = a.tape;
  return t->push(a.value() * s, detail::any_grad({a}),
                 [t, a, s](const Mat<Scalar>& g) { t->accumulate(a.id, g * s); });
}

/// Elementwise product with a constant matrix (masks, dropout).
template <typename Scalar>
Var<Scalar> mul_const(Var<Scalar> a, Mat<Scalar> m) {
  auto* t = a.tape;
  Mat<Scalar> out = a.value().cwiseProduct(m);
  return t->push(std::move(out), detail::any_grad({a}),
                 [t, a, m = std::move(m)](const Mat<Scalar>& g) {
                   t->accumulate(a.id, g.cwiseProduct(m));
                 });
}

template <typename Scalar>
Var<Scalar> add_const(Var<Scalar> a, const Mat<Scalar>& m) {
  auto* t = a.tape;
  return t->push(a.value() + m, detail::any_grad({a}),
                 [t, a](const Mat<Scalar>& g) { t->accumulate(a.id, g); });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, Eigen::Index rows, Eigen::Index cols) {
  auto* t = a.tape;
  if (rows * cols != a.value().size()) throw Error("ShapeMismatch", "reshape");
  Mat<Scalar> out = Eigen::Map<const Mat<Scalar>>(a.value().data(), rows, cols);
  return t->push(std::move(out), detail::any_grad({a}), [t, a](const Mat<Scalar>& g) {
    t->accumulate(a.id, Eigen::Map<const Mat<Scalar>>(g.data(), a.rows(), a.cols()));
  });
}

// ---------------------------------------------------------------------------
// Slicing

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Eigen::Index start, Eigen::Index n) {
  auto* t = a.tape;
  Mat<Scalar> out = a.value().middleCols(start, n);
  return t->push(std::move(out), detail::any_grad({a}), [t, a, start, n](const Mat<Scalar>& g) {
    t->grad_buffer(a.id).middleCols(start, n) += g;
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index start, Eigen::Index n) {
  auto* t = a.tape;
  Mat<Scalar> out = a.value().middleRows(start, n);
  return t->push(std::move(out), detail::any_grad({a}), [t, a, start, n](const Mat<Scalar>& g) {
    t->grad_buffer(a.id).middleRows(start, n) += g;
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  auto* t = parts.front().tape;
  Eigen::Index cols = 0;
  bool grad = false;
  for (const auto& p : parts) {
    cols += p.cols();
    grad = grad || t->requires_grad(p.id);
  }
  Mat<Scalar> out(parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t->push(std::move(out), grad, [t, parts](const Mat<Scalar>& g) {
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      t->accumulate(p.id, g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  auto* t = parts.front().tape;
  Eigen::Index rows = 0;
  bool grad = false;
  for (const auto& p : parts) {
    rows += p.rows();
    grad = grad || t->requires_grad(p.id);
  }
  Mat<Scalar> out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t->push(std::move(out), grad, [t, parts](const Mat<Scalar>& g) {
    Eigen::Index r0 = 0;
    for (const auto& p : parts) {
      t->accumulate(p.id, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

/// Row gather with a (rows x k) index table: output row r is the
/// concatenation of input rows table[r*k + j]; index -1 yields zeros.
/// Covers embedding lookup, im2col, padding, window partition and shifts.
template <typename Scalar>
Var<Scalar> unfold(Var<Scalar> a, std::vector<int> table, int k) {
  auto* t = a.tape;
  const Eigen::Index c = a.cols();
  const auto rows = static_cast<Eigen::Index>(table.size()) / k;
  Mat<Scalar> out = Mat<Scalar>::Zero(rows, c * k);
  const auto& src = a.value();
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int j = 0; j < k; ++j) {
      const int s = table[static_cast<std::size_t>(r * k + j)];
      if (s >= 0) out.block(r, j * c, 1, c) = src.row(s);
    }
  return t->push(std::move(out), detail::any_grad({a}),
                 [t, a, table = std::move(table), k, c, rows](const Mat<Scalar>& g) {
                   auto& ga = t->grad_buffer(a.id);
                   for (Eigen::Index r = 0; r < rows; ++r)
                     for (int j = 0; j < k; ++j) {
                       const int s = table[static_cast<std::size_t>(r * k + j)];
                       if (s >= 0) ga.row(s) += g.block(r, j * c, 1, c);
                     }
                 });
}

/// Depthwise combination: out(r, c) = sum_j x(table[r*k+j], c) * w(j, c) + b(c).
template <typename Scalar>
Var<Scalar> depthwise(Var<Scalar> x, std::vector<int> table, int k, Var<Scalar> w, Var<Scalar> b) {
  auto* t = x.tape;
  const auto rows = static_cast<Eigen::Index>(table.size()) / k;
  Mat<Scalar> out(rows, x.cols());
  const auto& xv = x.value();
  const auto& wv = w.value();
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.row(r) = b.value().row(0);
    for (int j = 0; j < k; ++j) {
      const int s = table[static_cast<std::size_t>(r * k + j)];
      if (s >= 0) out.row(r) += xv.row(s).cwiseProduct(wv.row(j));
    }
  }
  return t->push(std::move(out), detail::any_grad({x, w, b}),
                 [t, x, w, b, table = std::move(table), k, rows](const Mat<Scalar>& g) {
                   const bool gx = t->requires_grad(x.id), gw = t->requires_grad(w.id);
                   if (t->requires_grad(b.id)) t->accumulate(b.id, g.colwise().sum());
                   if (!gx && !gw) return;
                   const auto& xv = x.value();
                   const auto& wv = w.value();
                   Mat<Scalar>* gxb = gx ? &t->grad_buffer(x.id) : nullptr;
                   Mat<Scalar>* gwb = gw ? &t->grad_buffer(w.id) : nullptr;
                   for (Eigen::Index r = 0; r < rows; ++r)
                     for (int j = 0; j < k; ++j) {
                       const int s = table[static_cast<std::size_t>(r * k + j)];
                       if (s < 0) continue;
                       if (gxb) gxb->row(s) += g.row(r).cwiseProduct(wv.row(j));
                       if (gwb) gwb->row(j) += g.row(r).cwiseProduct(xv.row(s));
                     }
                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  auto* t = a.tape;
  Mat<Scalar> out = a.value().cwiseMax(Scalar(0));
  return t->push(std::move(out), detail::any_grad({a}), [t, a](const Mat<Scalar>& g) {
    t->accumulate(a.id, (a.value().array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

/// Exact GELU, x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  auto* t = a.tape;
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Mat<Scalar> out = a.value().unaryExpr([inv_sqrt2](Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2));
  });
  return t->push(std::move(out), detail::any_grad({a}), [t, a, inv_sqrt2](const Mat<Scalar>& g) {
    const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Mat<Scalar> d = a.value().unaryExpr([&](Scalar x) {
      return Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2)) +
             x * inv_sqrt_2pi * std::exp(Scalar(-0.5) * x * x);
    });
    t->accumulate(a.id, g.cwiseProduct(d));
  });
}

/// Per-row layer normalization with affine 1 x n gamma and beta.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps = Scalar(1e-5)) {
  auto* t = x.tape;
  const auto& xv = x.value();
  const auto n = static_cast<Scalar>(xv.cols());
  Vec<Scalar> inv_std(xv.rows());
  Mat<Scalar> xhat(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const Scalar mu = xv.row(r).sum() / n;
    const auto centered = xv.row(r).array() - mu;
    const Scalar var = centered.square().sum() / n;
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  Mat<Scalar> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return t->push(std::move(out), detail::any_grad({x, gamma, beta}),
                 [t, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](
                     const Mat<Scalar>& g) {
                   if (t->requires_grad(gamma.id))
                     t->accumulate(gamma.id, g.cwiseProduct(xhat).colwise().sum());
                   if (t->requires_grad(beta.id)) t->accumulate(beta.id, g.colwise().sum());
                   if (!t->requires_grad(x.id)) return;
                   Mat<Scalar> dxhat = g.array().rowwise() * gamma.value().row(0).array();
                   Mat<Scalar> dx(dxhat.rows(), dxhat.cols());
                   for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                     const Scalar mean_d = dxhat.row(r).sum() / n;
                     const Scalar mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
                     dx.row(r) = (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx) *
                                 inv_std(r);
                   }
                   t->accumulate(x.id, dx);
                 });
}

/// Row softmax of (x + mask). Masked entries use -inf and come out exactly 0.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x, const Mat<Scalar>* additive_mask = nullptr) {
  auto* t = x.tape;
  Mat<Scalar> y = x.value();
  if (additive_mask) y += *additive_mask;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const Scalar m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Mat<Scalar> saved = y;
  return t->push(std::move(y), detail::any_grad({x}),
                 [t, x, saved = std::move(saved)](const Mat<Scalar>& g) {
                   Vec<Scalar> dots = g.cwiseProduct(saved).rowwise().sum();
                   Mat<Scalar> dx = saved.cwiseProduct((g.colwise() - dots));
                   t->accumulate(x.id, dx);
                 });
}

/// Sum over rows of token cross-entropy against `targets` (one per row).
/// Rows whose target equals `ignore` contribute nothing. With label
/// smoothing e the target distribution is (1-e) one-hot + e uniform.
template <typename Scalar>
Var<Scalar> cross_entropy_sum(Var<Scalar> logits, std::vector<int> targets, int ignore,
                              Scalar label_smoothing = Scalar(0)) {
  auto* t = logits.tape;
  const auto& z = logits.value();
  const auto v = static_cast<Scalar>(z.cols());
  Mat<Scalar> probs(z.rows(), z.cols());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    probs.row(r) = (z.row(r).array() - lse).exp();
    const int y = targets[static_cast<std::size_t>(r)];
    if (y == ignore) continue;
    const Scalar nll = lse - z(r, y);
    if (label_smoothing > 0) {
      const Scalar mean_nll = lse - z.row(r).sum() / v;
      total += (Scalar(1) - label_smoothing) * nll + label_smoothing * mean_nll;
    } else {
      total += nll;
    }
  }
  Mat<Scalar> out(1, 1);
  out(0, 0) = total;
  return t->push(std::move(out), detail::any_grad({logits}),
                 [t, logits, targets = std::move(targets), ignore, label_smoothing, v,
                  probs = std::move(probs)](const Mat<Scalar>& g) {
                   Mat<Scalar> d = probs;
                   for (Eigen::Index r = 0; r < d.rows(); ++r) {
                     const int y = targets[static_cast<std::size_t>(r)];
                     if (y == ignore) {
                       d.row(r).setZero();
                       continue;
                     }
                     if (label_smoothing > 0) d.row(r).array() -= label_smoothing / v;
                     d(r, y) -= Scalar(1) - label_smoothing;
                   }
                   t->accumulate(logits.id, d * g(0, 0));
                 });
}

}  // namespace smt::ad
