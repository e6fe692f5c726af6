// Copyright 2026 The mrsv Authors.
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

// Differentiable primitives. Every op records its output on the input's tape
// together with an analytic backward rule. Matrices are row-major; rank-1
// tensors behave as a single row.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "mrsv/numerics/tape.hpp"

namespace mrsv {

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;

namespace detail {

template <class Real>
ConstMatMap<Real> as_matrix(const Tensor<Real>& t) {
  return ConstMatMap<Real>(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                           static_cast<Eigen::Index>(t.cols()));
}

template <class Real>
MatMap<Real> grad_matrix(Tape<Real>& tape, std::size_t id) {
  const auto& v = tape.value(id);
  return MatMap<Real>(tape.grad_accum(id), static_cast<Eigen::Index>(v.rows()),
                      static_cast<Eigen::Index>(v.cols()));
}

template <class Real>
ConstMatMap<Real> self_grad(Tape<Real>& tape, std::size_t self) {
  const auto& n = tape.node(self);
  return ConstMatMap<Real>(n.grad.data(), static_cast<Eigen::Index>(n.value.rows()),
                           static_cast<Eigen::Index>(n.value.cols()));
}

inline void require(bool ok, const char* op, const std::vector<std::size_t>& a,
                    const std::vector<std::size_t>& b) {
  if (!ok) throw ShapeError(cat(op, ": shape mismatch ", shape_str(a), " vs ", shape_str(b)));
}

template <class Real>
void require_same_tape(Var<Real> a, Var<Real> b, const char* op) {
  if (a.tape != b.tape) throw std::invalid_argument(cat(op, ": operands on different tapes"));
}

}  // namespace detail

// Linear algebra ---------------------------------------------------------------

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul", A.shape, B.shape);
  Tensor<Real> out({A.rows(), B.cols()});
  MatMap<Real>(out.data.data(), A.rows(), B.cols()).noalias() = detail::as_matrix(A) * detail::as_matrix(B);
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), "matmul", {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    auto g = detail::self_grad(t, self);
    if (t.needs_grad(ia)) detail::grad_matrix(t, ia).noalias() += g * detail::as_matrix(t.value(ib)).transpose();
    if (t.needs_grad(ib)) detail::grad_matrix(t, ib).noalias() += detail::as_matrix(t.value(ia)).transpose() * g;
  });
}

// a · bᵀ
template <class Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "matmul_nt");
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.cols() == B.cols(), "matmul_nt", A.shape, B.shape);
  Tensor<Real> out({A.rows(), B.rows()});
  MatMap<Real>(out.data.data(), A.rows(), B.rows()).noalias() =
      detail::as_matrix(A) * detail::as_matrix(B).transpose();
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), "matmul_nt", {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    auto g = detail::self_grad(t, self);
    if (t.needs_grad(ia)) detail::grad_matrix(t, ia).noalias() += g * detail::as_matrix(t.value(ib));
    if (t.needs_grad(ib)) detail::grad_matrix(t, ib).noalias() += g.transpose() * detail::as_matrix(t.value(ia));
  });
}

// x·W + b with W [in, out] and b [out].
template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
  detail::require_same_tape(x, w, "linear");
  const auto& X = x.value();
  const auto& W = w.value();
  const auto& B = b.value();
  detail::require(W.rank() == 2 && X.cols() == W.rows(), "linear", X.shape, W.shape);
  detail::require(B.size() == W.cols(), "linear(bias)", W.shape, B.shape);
  const std::size_t n = X.rows(), m = W.cols();
  Tensor<Real> out({n, m});
  MatMap<Real> O(out.data.data(), n, m);
  O.noalias() = detail::as_matrix(X) * detail::as_matrix(W);
  O.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(B.data.data(), m);
  const auto ix = x.id, iw = w.id, ib = b.id;
  return x.tape->record(std::move(out), "linear", {ix, iw, ib}, [ix, iw, ib](Tape<Real>& t, std::size_t self) {
    auto g = detail::self_grad(t, self);
    if (t.needs_grad(ix)) detail::grad_matrix(t, ix).noalias() += g * detail::as_matrix(t.value(iw)).transpose();
    if (t.needs_grad(iw)) detail::grad_matrix(t, iw).noalias() += detail::as_matrix(t.value(ix)).transpose() * g;
    if (t.needs_grad(ib)) {
      Real* gb = t.grad_accum(ib);
      const auto col = g.colwise().sum();
      for (Eigen::Index j = 0; j < col.size(); ++j) gb[j] += col(j);
    }
  });
}

template <class Real>
Var<Real> transpose(Var<Real> x) {
  const auto& X = x.value();
  detail::require(X.rank() == 2, "transpose", X.shape, {});
  Tensor<Real> out({X.cols(), X.rows()});
  MatMap<Real>(out.data.data(), X.cols(), X.rows()) = detail::as_matrix(X).transpose();
  const auto ix = x.id;
  return x.tape->record(std::move(out), "transpose", {ix}, [ix](Tape<Real>& t, std::size_t self) {
    detail::grad_matrix(t, ix) += detail::self_grad(t, self).transpose();
  });
}

// Elementwise ------------------------------------------------------------------

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "add");
  detail::require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  Tensor<Real> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), "add", {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    for (auto id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      Real* d = t.grad_accum(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "sub");
  detail::require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
  Tensor<Real> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), "sub", {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ia)) {
      Real* d = t.grad_accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      Real* d = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "mul");
  detail::require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  Tensor<Real> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), "mul", {ia, ib}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& A = t.value(ia).data;
    const auto& B = t.value(ib).data;
    if (t.needs_grad(ia)) {
      Real* d = t.grad_accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * B[i];
    }
    if (t.needs_grad(ib)) {
      Real* d = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * A[i];
    }
  });
}

// x + b broadcast over rows; b has x.cols() elements.
template <class Real>
Var<Real> add_row(Var<Real> x, Var<Real> b) {
  detail::require_same_tape(x, b, "add_row");
  detail::require(b.size() == x.cols(), "add_row", x.shape(), b.shape());
  Tensor<Real> out = x.value();
  const auto& B = b.value().data;
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B[i % c];
  const auto ix = x.id, ib = b.id;
  return x.tape->record(std::move(out), "add_row", {ix, ib}, [ix, ib, c](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ix)) {
      Real* d = t.grad_accum(ix);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      Real* d = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
    }
  });
}

template <class Real>
Var<Real> scale(Var<Real> x, Real c) {
  Tensor<Real> out = x.value();
  for (auto& v : out.data) v *= c;
  const auto ix = x.id;
  return x.tape->record(std::move(out), "scale", {ix}, [ix, c](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
  });
}

// s · x for a recorded scalar s.
template <class Real>
Var<Real> scale_by(Var<Real> x, Var<Real> s) {
  detail::require_same_tape(x, s, "scale_by");
  detail::require(s.size() == 1, "scale_by", x.shape(), s.shape());
  const Real c = s.item();
  Tensor<Real> out = x.value();
  for (auto& v : out.data) v *= c;
  const auto ix = x.id, is = s.id;
  return x.tape->record(std::move(out), "scale_by", {ix, is}, [ix, is](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& X = t.value(ix).data;
    const Real c = t.value(is).data[0];
    if (t.needs_grad(ix)) {
      Real* d = t.grad_accum(ix);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
    }
    if (t.needs_grad(is)) {
      Real acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * X[i];
      t.grad_accum(is)[0] += acc;
    }
  });
}

namespace detail {

// Elementwise op whose derivative is expressed through input x and output y.
template <class Real, class F, class DF>
Var<Real> unary(Var<Real> x, std::string_view name, F f, DF df) {
  Tensor<Real> out = x.value();
  for (auto& v : out.data) v = f(v);
  const auto ix = x.id;
  return x.tape->record(std::move(out), name, {ix}, [ix, df](Tape<Real>& t, std::size_t self) {
    const auto& n = t.node(self);
    const auto& X = t.value(ix).data;
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += n.grad[i] * df(X[i], n.value.data[i]);
  });
}

}  // namespace detail

template <class Real>
Var<Real> exp(Var<Real> x) {
  return detail::unary(x, "exp", [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <class Real>
Var<Real> log(Var<Real> x) {
  return detail::unary(x, "log", [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <class Real>
Var<Real> tanh(Var<Real> x) {
  return detail::unary(x, "tanh", [](Real v) { return std::tanh(v); }, [](Real, Real y) { return 1 - y * y; });
}

template <class Real>
Var<Real> relu(Var<Real> x) {
  return detail::unary(
      x, "relu", [](Real v) { return v > 0 ? v : Real(0); }, [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

template <class Real>
Var<Real> abs(Var<Real> x) {
  return detail::unary(
      x, "abs", [](Real v) { return std::abs(v); },
      [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

// Exact (erf) GELU.
template <class Real>
Var<Real> gelu(Var<Real> x) {
  constexpr Real inv_sqrt2 = Real(0.70710678118654752440);
  constexpr Real inv_sqrt2pi = Real(0.39894228040143267794);
  return detail::unary(
      x, "gelu", [](Real v) { return Real(0.5) * v * (1 + std::erf(v * inv_sqrt2)); },
      [](Real v, Real) {
        return Real(0.5) * (1 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
      });
}

// Row-wise ---------------------------------------------------------------------

template <class Real>
Var<Real> softmax_rows(Var<Real> x) {
  const auto& X = x.value();
  Tensor<Real> out(X.shape);
  const std::size_t r = X.rows(), c = X.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* xi = &X.data[i * c];
    Real* yi = &out.data[i * c];
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xi[j]);
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yi[j] /= s;
  }
  const auto ix = x.id;
  return x.tape->record(std::move(out), "softmax", {ix}, [ix, r, c](Tape<Real>& t, std::size_t self) {
    const auto& n = t.node(self);
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < r; ++i) {
      const Real* y = &n.value.data[i * c];
      const Real* g = &n.grad[i * c];
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

template <class Real>
Var<Real> log_softmax_rows(Var<Real> x) {
  const auto& X = x.value();
  Tensor<Real> out(X.shape);
  const std::size_t r = X.rows(), c = X.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* xi = &X.data[i * c];
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xi[j]);
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
    const Real lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = xi[j] - lse;
  }
  const auto ix = x.id;
  return x.tape->record(std::move(out), "log_softmax", {ix}, [ix, r, c](Tape<Real>& t, std::size_t self) {
    const auto& n = t.node(self);
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < r; ++i) {
      const Real* y = &n.value.data[i * c];
      const Real* g = &n.grad[i * c];
      Real gs = 0;
      for (std::size_t j = 0; j < c; ++j) gs += g[j];
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

// Layer normalization over the last axis with learned gain and bias.
template <class Real>
Var<Real> layernorm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps = Real(1e-6)) {
  const auto& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  detail::require(gain.size() == c && bias.size() == c, "layernorm", X.shape, gain.shape());
  Tensor<Real> out(X.shape);
  std::vector<Real> xhat(X.size()), inv_std(r);
  const auto& G = gain.value().data;
  const auto& B = bias.value().data;
  for (std::size_t i = 0; i < r; ++i) {
    const Real* xi = &X.data[i * c];
    Real mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= Real(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= Real(c);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const Real h = (xi[j] - mean) * inv_std[i];
      xhat[i * c + j] = h;
      out.data[i * c + j] = h * G[j] + B[j];
    }
  }
  const auto ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      std::move(out), "layernorm", {ix, ig, ib},
      [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Real>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& G = t.value(ig).data;
        if (t.needs_grad(ig) || t.needs_grad(ib)) {
          Real* dg = t.grad_accum(ig);
          Real* db = t.grad_accum(ib);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += g[i * c + j] * xhat[i * c + j];
              db[j] += g[i * c + j];
            }
        }
        if (!t.needs_grad(ix)) return;
        Real* dx = t.grad_accum(ix);
        for (std::size_t i = 0; i < r; ++i) {
          Real m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const Real dh = g[i * c + j] * G[j];
            m1 += dh;
            m2 += dh * xhat[i * c + j];
          }
          m1 /= Real(c);
          m2 /= Real(c);
          for (std::size_t j = 0; j < c; ++j) {
            const Real dh = g[i * c + j] * G[j];
            dx[i * c + j] += inv_std[i] * (dh - m1 - xhat[i * c + j] * m2);
          }
        }
      });
}

// Unit-L2 rows. A row with norm below 1e-12 is rejected rather than divided.
template <class Real>
Var<Real> l2_normalize_rows(Var<Real> x) {
  const auto& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  Tensor<Real> out(X.shape);
  std::vector<Real> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += X.data[i * c + j] * X.data[i * c + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] >= Real(1e-12)))
      throw DegenerateVectorError(cat("l2_normalize: row ", i, " has norm ", norms[i]));
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = X.data[i * c + j] / norms[i];
  }
  const auto ix = x.id;
  return x.tape->record(std::move(out), "l2_normalize", {ix},
                        [ix, r, c, norms = std::move(norms)](Tape<Real>& t, std::size_t self) {
                          const auto& n = t.node(self);
                          Real* d = t.grad_accum(ix);
                          for (std::size_t i = 0; i < r; ++i) {
                            const Real* y = &n.value.data[i * c];
                            const Real* g = &n.grad[i * c];
                            Real dot = 0;
                            for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
                            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += (g[j] - y[j] * dot) / norms[i];
                          }
                        });
}

// Reductions -------------------------------------------------------------------

template <class Real>
Var<Real> sum(Var<Real> x) {
  Real s = 0;
  for (Real v : x.value().data) s += v;
  const auto ix = x.id;
  return x.tape->record(Tensor<Real>::scalar(s), "sum", {ix}, [ix](Tape<Real>& t, std::size_t self) {
    const Real g = t.node(self).grad[0];
    const std::size_t n = t.value(ix).size();
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < n; ++i) d[i] += g;
  });
}

template <class Real>
Var<Real> mean(Var<Real> x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), Real(1) / Real(x.size()));
}

template <class Real>
Var<Real> dot(Var<Real> a, Var<Real> b) {
  return sum(mul(a, b));
}

// Column-wise mean over rows: [n, c] -> [1, c].
template <class Real>
Var<Real> mean_rows(Var<Real> x) {
  const auto& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  if (r == 0) throw ShapeError("mean_rows: no rows");
  Tensor<Real> out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j] += X.data[i * c + j];
  for (auto& v : out.data) v /= Real(r);
  const auto ix = x.id;
  return x.tape->record(std::move(out), "mean_rows", {ix}, [ix, r, c](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j] / Real(r);
  });
}

// Element (i, idx[i]) of each row: [n, c] -> [n].
template <class Real>
Var<Real> pick(Var<Real> x, std::vector<std::size_t> idx) {
  const auto& X = x.value();
  const std::size_t c = X.cols();
  if (idx.size() != X.rows()) throw ShapeError(cat("pick: ", idx.size(), " indices for shape ", shape_str(X.shape)));
  Tensor<Real> out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= c) throw std::out_of_range(cat("pick: index ", idx[i], " >= ", c));
    out.data[i] = X.data[i * c + idx[i]];
  }
  const auto ix = x.id;
  return x.tape->record(std::move(out), "pick", {ix}, [ix, c, idx = std::move(idx)](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < idx.size(); ++i) d[i * c + idx[i]] += g[i];
  });
}

// Structural -------------------------------------------------------------------

template <class Real>
Var<Real> embedding(Var<Real> table, const std::vector<int>& ids) {
  const auto& T = table.value();
  const std::size_t v = T.rows(), c = T.cols();
  Tensor<Real> out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw std::out_of_range(cat("embedding: id ", ids[i], " outside vocabulary of ", v));
    std::copy_n(&T.data[ids[i] * c], c, &out.data[i * c]);
  }
  const auto it = table.id;
  return table.tape->record(std::move(out), "embedding", {it}, [it, c, ids](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Real* d = t.grad_accum(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d[ids[i] * c + j] += g[i * c + j];
  });
}

template <class Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<std::size_t> ids, offsets;
  for (auto& p : parts) {
    detail::require(p.cols() == c, "concat_rows", parts[0].shape(), p.shape());
    detail::require_same_tape(parts[0], p, "concat_rows");
    offsets.push_back(r * c);
    r += p.rows();
    ids.push_back(p.id);
  }
  Tensor<Real> out({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    std::copy(v.begin(), v.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offsets[k]));
  }
  return parts[0].tape->record(std::move(out), "concat_rows", ids, [ids, offsets](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      const std::size_t n = t.value(ids[k]).size();
      if (n == 0) continue;
      Real* d = t.grad_accum(ids[k]);
      for (std::size_t i = 0; i < n; ++i) d[i] += g[offsets[k] + i];
    }
  });
}

// Rows idx[0], idx[1], ... (repeats allowed; gradients are summed).
template <class Real>
Var<Real> gather_rows(Var<Real> x, std::vector<std::size_t> idx) {
  const auto& X = x.value();
  const std::size_t c = X.cols(), r = X.rows();
  Tensor<Real> out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) throw std::out_of_range(cat("gather_rows: row ", idx[i], " of ", r));
    std::copy_n(&X.data[idx[i] * c], c, &out.data[i * c]);
  }
  const auto ix = x.id;
  return x.tape->record(std::move(out), "gather_rows", {ix},
                        [ix, c, idx = std::move(idx)](Tape<Real>& t, std::size_t self) {
                          const auto& g = t.node(self).grad;
                          Real* d = t.grad_accum(ix);
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t j = 0; j < c; ++j) d[idx[i] * c + j] += g[i * c + j];
                        });
}

template <class Real>
Var<Real> slice_rows(Var<Real> x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows())
    throw ShapeError(cat("slice_rows: [", begin, ",", end, ") of shape ", shape_str(x.shape())));
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
  return gather_rows(x, std::move(idx));
}

// Columns [begin, end) of every row.
template <class Real>
Var<Real> slice_cols(Var<Real> x, std::size_t begin, std::size_t end) {
  const auto& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  if (begin > end || end > c) throw ShapeError(cat("slice_cols: [", begin, ",", end, ") of ", shape_str(X.shape)));
  const std::size_t w = end - begin;
  Tensor<Real> out({r, w});
  for (std::size_t i = 0; i < r; ++i) std::copy_n(&X.data[i * c + begin], w, &out.data[i * w]);
  const auto ix = x.id;
  return x.tape->record(std::move(out), "slice_cols", {ix}, [ix, r, c, w, begin](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) d[i * c + begin + j] += g[i * w + j];
  });
}

template <class Real>
Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
  detail::require_same_tape(a, b, "concat_cols");
  detail::require(a.rows() == b.rows(), "concat_cols", a.shape(), b.shape());
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  Tensor<Real> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(&a.value().data[i * ca], ca, &out.data[i * c]);
    std::copy_n(&b.value().data[i * cb], cb, &out.data[i * c + ca]);
  }
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), "concat_cols", {ia, ib}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ia)) {
      Real* d = t.grad_accum(ia);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) d[i * ca + j] += g[i * c + j];
    }
    if (t.needs_grad(ib)) {
      Real* d = t.grad_accum(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) d[i * cb + j] += g[i * c + ca + j];
    }
  });
}

}  // namespace mrsv
