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
#include <span>
#include <string>
#include <vector>

#include "smt/autodiff.hpp"
#include "smt/rng.hpp"
#include "smt/types.hpp"

namespace smt::nn {

/// Named, ordered model parameters. Order is construction order and defines
/// the checkpoint layout.
template <typename Scalar>
class ParameterSet {
 public:
  int add(std::string name, Mat<Scalar> value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  const Mat<Scalar>& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  Mat<Scalar>& value(int i) { return values_[static_cast<std::size_t>(i)]; }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (names_[static_cast<std::size_t>(i)] == name) return i;
    return -1;
  }

  ad::Var<Scalar> bind(ad::Tape<Scalar>& tape, int i) const {
    return tape.param(values_[static_cast<std::size_t>(i)], i);
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<Scalar>> values_;
};

template <typename Scalar>
Mat<Scalar> random_normal(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.normal(0.0, sd));
  return m;
}

/// y = x W + b with W of shape (in, out).
struct Linear {
  int weight = -1;
  int bias = -1;  ///< -1 when bias-free
  int in = 0;
  int out = 0;

  template <typename Scalar>
  static Linear create(ParameterSet<Scalar>& ps, const std::string& name, int in, int out,
                       Rng& rng, bool with_bias = true, double sd = -1.0) {
    Linear l;
    l.in = in;
    l.out = out;
    if (sd < 0) sd = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight = ps.add(name + ".weight", random_normal<Scalar>(in, out, sd, rng));
    if (with_bias) l.bias = ps.add(name + ".bias", Mat<Scalar>::Zero(1, out));
    return l;
  }

  template <typename Scalar>
  ad::Var<Scalar> operator()(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps,
                             ad::Var<Scalar> x) const {
    auto y = ad::matmul(x, ps.bind(t, weight));
    return bias >= 0 ? ad::add_row(y, ps.bind(t, bias)) : y;
  }
};

struct LayerNorm {
  int gamma = -1;
  int beta = -1;

  template <typename Scalar>
  static LayerNorm create(ParameterSet<Scalar>& ps, const std::string& name, int dim) {
    return {ps.add(name + ".gamma", Mat<Scalar>::Ones(1, dim)),
            ps.add(name + ".beta", Mat<Scalar>::Zero(1, dim))};
  }

  template <typename Scalar>
  ad::Var<Scalar> operator()(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps,
                             ad::Var<Scalar> x) const {
    return ad::layer_norm(x, ps.bind(t, gamma), ps.bind(t, beta));
  }
};

/// Multi-head scaled dot-product attention with separate q/k/v/o projections.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  template <typename Scalar>
  static MultiHeadAttention create(ParameterSet<Scalar>& ps, const std::string& name, int dim,
                                   int heads, Rng& rng) {
    if (heads <= 0 || dim % heads != 0)
      throw Error("InvalidConfig", name + ": width not divisible by heads");
    MultiHeadAttention a;
    a.heads = heads;
    a.q = Linear::create(ps, name + ".q", dim, dim, rng);
    a.k = Linear::create(ps, name + ".k", dim, dim, rng);
    a.v = Linear::create(ps, name + ".v", dim, dim, rng);
    a.o = Linear::create(ps, name + ".o", dim, dim, rng);
    return a;
  }

  /// Attends from queries (Tq x d) to keys/values (Tk x d). `mask` is an
  /// optional additive (Tq x Tk) constant.
  template <typename Scalar>
  ad::Var<Scalar> operator()(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps,
                             ad::Var<Scalar> xq, ad::Var<Scalar> xkv,
                             const Mat<Scalar>* mask = nullptr) const {
    auto qa = q(t, ps, xq);
    auto ka = k(t, ps, xkv);
    auto va = v(t, ps, xkv);
    return o(t, ps, attend(qa, ka, va, heads, mask));
  }

  /// Core attention on already projected q/k/v.
  template <typename Scalar>
  static ad::Var<Scalar> attend(ad::Var<Scalar> qa, ad::Var<Scalar> ka, ad::Var<Scalar> va,
                                int heads, const Mat<Scalar>* mask,
                                const std::vector<ad::Var<Scalar>>* bias = nullptr) {
    const auto dh = qa.cols() / heads;
    const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    std::vector<ad::Var<Scalar>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto qh = heads == 1 ? qa : ad::slice_cols(qa, h * dh, dh);
      auto kh = heads == 1 ? ka : ad::slice_cols(ka, h * dh, dh);
      auto vh = heads == 1 ? va : ad::slice_cols(va, h * dh, dh);
      auto scores = ad::scale(ad::matmul_nt(qh, kh), s);
      if (bias) scores = ad::add(scores, (*bias)[static_cast<std::size_t>(h)]);
      outs.push_back(ad::matmul(ad::softmax_rows(scores, mask), vh));
    }
    return heads == 1 ? outs.front() : ad::concat_cols(outs);
  }
};

// ---------------------------------------------------------------------------
// Index tables for ad::unfold / ad::depthwise on (h*w) x c feature maps.

struct SpatialTable {
  int out_h = 0;
  int out_w = 0;
  int k = 0;  ///< entries per output row
  std::vector<int> table;
};

/// Sliding kh x kw window with stride (sh, sw) and leading zero padding
/// (ph, pw). Output size ceil((h + 2p - k) / s) + 1 style, clamped so that
/// windows start inside the padded image; out-of-range taps are -1.
SpatialTable conv_table(int h, int w, int kh, int kw, int sh, int sw, int ph, int pw);

/// Non-overlapping k x k blocks with trailing zero padding; output is
/// ceil(h / k) x ceil(w / k).
SpatialTable patch_table(int h, int w, int k);

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace smt::nn
