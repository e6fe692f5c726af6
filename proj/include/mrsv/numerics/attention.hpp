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

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "mrsv/numerics/ops.hpp"

namespace mrsv {

// Packing of several independent sequences into one row-stacked matrix.
// Sequence s occupies rows [offsets[s], offsets[s+1]).
struct SequencePacking {
  std::vector<std::size_t> offsets{0};

  void add(std::size_t length) { offsets.push_back(offsets.back() + length); }
  std::size_t count() const { return offsets.size() - 1; }
  std::size_t total() const { return offsets.back(); }
  std::size_t begin(std::size_t s) const { return offsets[s]; }
  std::size_t length(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
};

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  // Per-row flag; keys with key_valid[row] == 0 receive no attention. Empty
  // means every key is valid.
  std::vector<std::uint8_t> key_valid;
};

// Multi-head scaled dot-product attention over packed sequences. q, k, v are
// [rows, heads * head_dim]; attention never crosses sequence boundaries.
template <class Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, const SequencePacking& packing,
                    const AttentionOptions& opt) {
  detail::require(q.shape() == k.shape() && q.shape() == v.shape(), "attention", q.shape(), k.shape());
  const std::size_t rows = q.rows(), width = q.cols(), heads = opt.heads;
  if (width % heads != 0) throw ShapeError(cat("attention: width ", width, " not divisible by ", heads, " heads"));
  if (packing.total() != rows)
    throw ShapeError(cat("attention: packing covers ", packing.total(), " rows, input has ", rows));
  if (!opt.key_valid.empty() && opt.key_valid.size() != rows)
    throw ShapeError(cat("attention: key mask of ", opt.key_valid.size(), " rows vs ", rows));
  const std::size_t hd = width / heads;
  const Real scale = Real(1) / std::sqrt(Real(hd));
  using Stride = Eigen::OuterStride<>;
  using CBlock = Eigen::Map<const RowMatrix<Real>, 0, Stride>;
  using Block = Eigen::Map<RowMatrix<Real>, 0, Stride>;

  // Attention probabilities, per (sequence, head), saved for backward.
  auto probs = std::make_shared<std::vector<RowMatrix<Real>>>();
  probs->reserve(packing.count() * heads);
  Tensor<Real> out({rows, width});
  const auto& Q = q.value().data;
  const auto& K = k.value().data;
  const auto& V = v.value().data;
  const Stride st(static_cast<Eigen::Index>(width));
  for (std::size_t s = 0; s < packing.count(); ++s) {
    const std::size_t o = packing.begin(s), n = packing.length(s);
    for (std::size_t h = 0; h < heads; ++h) {
      CBlock Qh(&Q[o * width + h * hd], n, hd, st), Kh(&K[o * width + h * hd], n, hd, st),
          Vh(&V[o * width + h * hd], n, hd, st);
      RowMatrix<Real> S = (Qh * Kh.transpose()) * scale;
      for (std::size_t i = 0; i < n; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const bool masked = (opt.causal && j > i) || (!opt.key_valid.empty() && !opt.key_valid[o + j]);
          if (masked) S(i, j) = -std::numeric_limits<Real>::infinity();
          mx = std::max(mx, S(i, j));
        }
        Real z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const Real e = std::isinf(S(i, j)) ? Real(0) : std::exp(S(i, j) - mx);
          S(i, j) = e;
          z += e;
        }
        // A row with no valid key attends to nothing.
        if (z > 0)
          for (std::size_t j = 0; j < n; ++j) S(i, j) /= z;
      }
      Block(&out.data[o * width + h * hd], n, hd, st).noalias() = S * Vh;
      probs->push_back(std::move(S));
    }
  }
  const auto iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(
      std::move(out), "attention", {iq, ik, iv},
      [iq, ik, iv, packing, heads, hd, width, scale, probs](Tape<Real>& t, std::size_t self) {
        const auto& G = t.node(self).grad;
        const auto& Q = t.value(iq).data;
        const auto& K = t.value(ik).data;
        const auto& V = t.value(iv).data;
        Real* dQ = t.grad_accum(iq);
        Real* dK = t.grad_accum(ik);
        Real* dV = t.grad_accum(iv);
        const Stride st(static_cast<Eigen::Index>(width));
        std::size_t p = 0;
        for (std::size_t s = 0; s < packing.count(); ++s) {
          const std::size_t o = packing.begin(s), n = packing.length(s);
          for (std::size_t h = 0; h < heads; ++h, ++p) {
            const std::size_t base = o * width + h * hd;
            const RowMatrix<Real>& P = (*probs)[p];
            CBlock Gh(&G[base], n, hd, st), Qh(&Q[base], n, hd, st), Kh(&K[base], n, hd, st),
                Vh(&V[base], n, hd, st);
            Block(&dV[base], n, hd, st).noalias() += P.transpose() * Gh;
            RowMatrix<Real> dP = Gh * Vh.transpose();
            // dS = P ∘ (dP − rowsum(P ∘ dP))
            const auto rs = (P.array() * dP.array()).rowwise().sum().eval();
            RowMatrix<Real> dS = (P.array() * (dP.array().colwise() - rs)).matrix() * scale;
            Block(&dQ[base], n, hd, st).noalias() += dS * Kh;
            Block(&dK[base], n, hd, st).noalias() += dS.transpose() * Qh;
          }
        }
      });
}

// Rotary position encoding over 4-D coordinates (h, w, l, t). The first
// rotary_dims features of every head are rotated in pairs; pair p belongs to
// axis p / bands and uses frequency freqs[p % bands]. The remaining features
// of the head pass through unchanged.
struct RotarySpec {
  std::size_t heads = 1;
  std::size_t head_dim = 2;
  std::size_t rotary_dims = 2;

  std::size_t pairs() const { return rotary_dims / 2; }
  std::size_t bands_per_axis() const { return pairs() / 4; }

  void validate() const {
    if (head_dim % 2 != 0 || rotary_dims % 2 != 0 || rotary_dims > head_dim)
      throw std::invalid_argument(cat("rotary: head_dim ", head_dim, " / rotary_dims ", rotary_dims, " invalid"));
    if (rotary_dims % 8 != 0)
      throw std::invalid_argument(cat("rotary: rotary_dims ", rotary_dims, " must split evenly over 4 axes"));
  }

  // Geometric frequencies: pi * (1e4)^(b / (2 * bands)).
  std::vector<double> frequencies() const {
    std::vector<double> f(bands_per_axis());
    for (std::size_t b = 0; b < f.size(); ++b)
      f[b] = std::numbers::pi * std::pow(1e4, static_cast<double>(b) / (2.0 * static_cast<double>(f.size())));
    return f;
  }
};

using Coord4 = std::array<double, 4>;

template <class Real>
Var<Real> apply_rotary(Var<Real> x, const std::vector<Coord4>& coords, const RotarySpec& spec) {
  spec.validate();
  const std::size_t rows = x.rows(), width = x.cols();
  if (width != spec.heads * spec.head_dim)
    throw ShapeError(cat("rotary: width ", width, " vs heads*head_dim ", spec.heads * spec.head_dim));
  if (coords.size() != rows) throw ShapeError(cat("rotary: ", coords.size(), " coordinates for ", rows, " rows"));
  const std::size_t pairs = spec.pairs(), bands = spec.bands_per_axis();
  const auto freqs = spec.frequencies();
  // cos/sin per (row, pair).
  auto cs = std::make_shared<std::vector<Real>>(rows * pairs * 2);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < pairs; ++p) {
      const double ang = coords[r][p / bands] * freqs[p % bands];
      (*cs)[(r * pairs + p) * 2] = static_cast<Real>(std::cos(ang));
      (*cs)[(r * pairs + p) * 2 + 1] = static_cast<Real>(std::sin(ang));
    }
  Tensor<Real> out = x.value();
  const auto& X = x.value().data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < spec.heads; ++h)
      for (std::size_t p = 0; p < pairs; ++p) {
        const std::size_t i = r * width + h * spec.head_dim + 2 * p;
        const Real c = (*cs)[(r * pairs + p) * 2], s = (*cs)[(r * pairs + p) * 2 + 1];
        out.data[i] = c * X[i] - s * X[i + 1];
        out.data[i + 1] = s * X[i] + c * X[i + 1];
      }
  const auto ix = x.id;
  return x.tape->record(std::move(out), "rotary", {ix}, [ix, rows, width, pairs, spec, cs](Tape<Real>& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    Real* d = t.grad_accum(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    // Undo the pass-through for rotated pairs and apply Rᵀ instead.
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t h = 0; h < spec.heads; ++h)
        for (std::size_t p = 0; p < pairs; ++p) {
          const std::size_t i = r * width + h * spec.head_dim + 2 * p;
          const Real c = (*cs)[(r * pairs + p) * 2], s = (*cs)[(r * pairs + p) * 2 + 1];
          d[i] += c * g[i] + s * g[i + 1] - g[i];
          d[i + 1] += -s * g[i] + c * g[i + 1] - g[i + 1];
        }
  });
}

// Attention pooling: for each window of rows of x, the query is the mean of
// the window's rows of x; keys and values are the corresponding rows of
// `keys` / `values`. Output row w is the softmax-weighted sum of values.
template <class Real>
Var<Real> window_attention(Var<Real> x, Var<Real> keys, Var<Real> values,
                           const std::vector<std::vector<std::size_t>>& windows) {
  detail::require(x.shape() == keys.shape() && keys.shape() == values.shape(), "window_attention", x.shape(),
                  keys.shape());
  const std::size_t c = x.cols(), nw = windows.size();
  const Real scale = Real(1) / std::sqrt(Real(c));
  const auto& X = x.value().data;
  const auto& Kv = keys.value().data;
  const auto& Vv = values.value().data;
  Tensor<Real> out({nw, c});
  auto queries = std::make_shared<std::vector<Real>>(nw * c, Real(0));
  auto probs = std::make_shared<std::vector<std::vector<Real>>>(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    const auto& win = windows[w];
    if (win.empty()) throw ShapeError("window_attention: empty window");
    Real* qv = &(*queries)[w * c];
    for (auto r : win)
      for (std::size_t j = 0; j < c; ++j) qv[j] += X[r * c + j];
    for (std::size_t j = 0; j < c; ++j) qv[j] /= Real(win.size());
    auto& p = (*probs)[w];
    p.resize(win.size());
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < win.size(); ++i) {
      Real s = 0;
      for (std::size_t j = 0; j < c; ++j) s += qv[j] * Kv[win[i] * c + j];
      p[i] = s * scale;
      mx = std::max(mx, p[i]);
    }
    Real z = 0;
    for (auto& e : p) z += (e = std::exp(e - mx));
    for (auto& e : p) e /= z;
    for (std::size_t i = 0; i < win.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) out.data[w * c + j] += p[i] * Vv[win[i] * c + j];
  }
  const auto ix = x.id, ik = keys.id, iv = values.id;
  return x.tape->record(
      std::move(out), "window_attention", {ix, ik, iv},
      [ix, ik, iv, c, scale, windows, queries, probs](Tape<Real>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& Kv = t.value(ik).data;
        const auto& Vv = t.value(iv).data;
        Real* dx = t.grad_accum(ix);
        Real* dk = t.grad_accum(ik);
        Real* dv = t.grad_accum(iv);
        std::vector<Real> ds, dq(c);
        for (std::size_t w = 0; w < windows.size(); ++w) {
          const auto& win = windows[w];
          const auto& p = (*probs)[w];
          const Real* gw = &g[w * c];
          const Real* qv = &(*queries)[w * c];
          ds.assign(win.size(), Real(0));
          Real pdp = 0;
          for (std::size_t i = 0; i < win.size(); ++i) {
            Real dp = 0;
            for (std::size_t j = 0; j < c; ++j) {
              dv[win[i] * c + j] += p[i] * gw[j];
              dp += gw[j] * Vv[win[i] * c + j];
            }
            ds[i] = dp;
            pdp += p[i] * dp;
          }
          std::fill(dq.begin(), dq.end(), Real(0));
          for (std::size_t i = 0; i < win.size(); ++i) {
            const Real dsi = p[i] * (ds[i] - pdp) * scale;
            for (std::size_t j = 0; j < c; ++j) {
              dq[j] += dsi * Kv[win[i] * c + j];
              dk[win[i] * c + j] += dsi * qv[j];
            }
          }
          for (auto r : win)
            for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += dq[j] / Real(win.size());
        }
      });
}

}  // namespace mrsv
