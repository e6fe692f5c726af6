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

// Contrastive span and frame-matching losses, their sum, and the two
// token-prediction ablations (independent mask LM, left-to-right decoder).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "mrsv/model.hpp"
#include "mrsv/numerics.hpp"

namespace mrsv {

inline constexpr double kMaxSigma = 100.0;

template <class Real>
struct ContrastiveLoss {
  Var<Real> loss;      // forward + backward
  Var<Real> forward;   // context -> all targets
  Var<Real> backward;  // paired target -> all contexts
  std::size_t duplicate_targets = 0;
};

// Symmetric InfoNCE. contexts [m, d], targets [n, d] with n >= m, and
// pairing[i] the target of context i. Logits are exp(log_sigma) * cosine;
// each direction is a mean negative log-likelihood.
template <class Real>
ContrastiveLoss<Real> contrastive_span_loss(Var<Real> contexts, Var<Real> targets, const std::vector<std::size_t>& pairing,
                                            Var<Real> log_sigma) {
  const std::size_t m = contexts.rows(), n = targets.rows();
  if (m == 0 || n == 0) throw ShapeError("contrastive loss: empty pool");
  if (pairing.size() != m) throw ShapeError(cat("contrastive loss: ", pairing.size(), " pairings for ", m, " contexts"));
  if (n < m) throw ShapeError(cat("contrastive loss: ", n, " targets for ", m, " contexts"));
  if (contexts.cols() != targets.cols())
    throw ShapeError(cat("contrastive loss: context width ", contexts.cols(), " vs target width ", targets.cols()));
  std::set<std::size_t> used;
  for (auto p : pairing) {
    if (p >= n) throw std::out_of_range(cat("contrastive loss: pairing ", p, " >= ", n));
    if (!used.insert(p).second) throw std::invalid_argument(cat("contrastive loss: target ", p, " paired twice"));
  }
  ContrastiveLoss<Real> out;
  const auto& T = targets.value();
  std::set<std::vector<Real>> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (!rows.insert(std::vector<Real>(T.data.begin() + i * T.cols(), T.data.begin() + (i + 1) * T.cols())).second)
      ++out.duplicate_targets;

  auto c = l2_normalize_rows(contexts), t = l2_normalize_rows(targets);
  auto sigma = exp(log_sigma);
  auto fwd = log_softmax_rows(scale_by(matmul_nt(c, t), sigma));
  out.forward = scale(mean(pick(fwd, pairing)), Real(-1));
  std::vector<std::size_t> diag(m);
  std::iota(diag.begin(), diag.end(), std::size_t(0));
  auto bwd = log_softmax_rows(scale_by(matmul_nt(gather_rows(t, pairing), c), sigma));
  out.backward = scale(mean(pick(bwd, diag)), Real(-1));
  out.loss = add(out.forward, out.backward);
  return out;
}

// Transcript contexts against frame targets; same form as the span loss.
template <class Real>
ContrastiveLoss<Real> frame_matching_loss(Var<Real> contexts, Var<Real> frames, const std::vector<std::size_t>& pairing,
                                          Var<Real> log_sigma) {
  return contrastive_span_loss(contexts, frames, pairing, log_sigma);
}

// Unweighted sum of the component losses.
template <class Real>
Var<Real> total_loss(const std::vector<Var<Real>>& components) {
  if (components.empty()) throw std::invalid_argument("total_loss: no components");
  Var<Real> sum = components[0];
  for (std::size_t i = 1; i < components.size(); ++i) sum = add(sum, components[i]);
  return sum;
}

inline double clip_sigma(double sigma) { return std::min(sigma, kMaxSigma); }

// Applied after each optimizer step to every loss.log_sigma_* parameter.
template <class Real>
void clip_sigma(ParamStore<Real>& params) {
  const Real cap = static_cast<Real>(std::log(kMaxSigma));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name.starts_with("loss.log_sigma_"))
      for (auto& v : params[i].value.data) v = std::min(v, cap);
}

namespace detail {

template <class Real>
void check_spans(const Model<Real>& model, std::size_t contexts, const std::vector<std::vector<int>>& spans) {
  if (spans.size() != contexts)
    throw ShapeError(cat("span objective: ", spans.size(), " spans for ", contexts, " mask states"));
  for (auto& s : spans) {
    if (s.empty() || s.size() > model.cfg.max_span)
      throw std::invalid_argument(cat("span objective: span of ", s.size(), " tokens, expected 1..", model.cfg.max_span));
    for (int t : s)
      if (t < 0 || static_cast<std::size_t>(t) >= model.cfg.vocab_size)
        throw std::out_of_range(cat("span objective: token ", t, " outside vocabulary"));
  }
}

template <class Real>
Var<Real> token_nll(Var<Real> logits, const std::vector<std::vector<int>>& spans) {
  std::vector<std::size_t> gold;
  for (auto& s : spans)
    for (int t : s) gold.push_back(static_cast<std::size_t>(t));
  return scale(mean(pick(log_softmax_rows(logits), gold)), Real(-1));
}

}  // namespace detail

// Independent token prediction: [mask state ; position i] -> 2-layer MLP ->
// tied output embedding. One row per span token, in span order.
template <class Real>
Var<Real> mask_lm_logits(Model<Real>& model, Tape<Real>& tape, Var<Real> mask_states,
                         const std::vector<std::vector<int>>& spans) {
  detail::check_spans(model, mask_states.rows(), spans);
  std::vector<std::size_t> rep, pos;
  for (std::size_t i = 0; i < spans.size(); ++i)
    for (std::size_t j = 0; j < spans[i].size(); ++j) rep.push_back(i), pos.push_back(j);
  auto x = concat_cols(gather_rows(mask_states, rep), gather_rows(model.P(tape, "masklm.pos"), pos));
  auto h = gelu(linear(x, model.P(tape, "masklm.w1"), model.P(tape, "masklm.b1")));
  h = linear(h, model.P(tape, "masklm.w2"), model.P(tape, "masklm.b2"));
  return add_row(matmul_nt(h, model.P(tape, "embed.tokens")), model.P(tape, "masklm.out_b"));
}

template <class Real>
Var<Real> mask_lm_loss(Model<Real>& model, Tape<Real>& tape, Var<Real> mask_states,
                       const std::vector<std::vector<int>>& spans) {
  return detail::token_nll(mask_lm_logits(model, tape, mask_states, spans), spans);
}

// Left-to-right decoder with the span encoder's layout: a context vector
// projected from the mask state, then the span tokens shifted right. Row j of
// a span's block predicts its token j.
template <class Real>
Var<Real> virtex_logits(Model<Real>& model, Tape<Real>& tape, Var<Real> mask_states,
                        const std::vector<std::vector<int>>& spans) {
  detail::check_spans(model, mask_states.rows(), spans);
  auto ctx = linear(mask_states, model.P(tape, "virtex.ctx.w"), model.P(tape, "virtex.ctx.b"));
  std::vector<int> prev;
  std::vector<std::size_t> order;  // row of ctx (< m) or m + index into prev
  std::vector<Coord4> coords;
  SequencePacking pack;
  const std::size_t m = spans.size();
  for (std::size_t i = 0; i < m; ++i) {
    order.push_back(i);
    coords.push_back({0, 0, 0, 0});
    for (std::size_t j = 0; j + 1 < spans[i].size(); ++j) {
      order.push_back(m + prev.size());
      prev.push_back(spans[i][j]);
      coords.push_back({0, 0, unit_position(j + 1, model.cfg.max_span + 1), 0});
    }
    pack.add(spans[i].size());
  }
  auto x = prev.empty() ? ctx : concat_rows<Real>({ctx, embedding(model.P(tape, "embed.tokens"), prev)});
  x = gather_rows(x, order);
  auto h = model.transformer(tape, "virtex", model.cfg.span_layers, x, pack, coords, {}, true);
  return add_row(matmul_nt(h, model.P(tape, "embed.tokens")), model.P(tape, "virtex.out_b"));
}

template <class Real>
Var<Real> virtex_lm_loss(Model<Real>& model, Tape<Real>& tape, Var<Real> mask_states,
                         const std::vector<std::vector<int>>& spans) {
  return detail::token_nll(virtex_logits(model, tape, mask_states, spans), spans);
}

}  // namespace mrsv
