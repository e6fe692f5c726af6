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

// AdamW with decoupled weight decay, gradient sanitization and the
// warmup + cosine learning-rate schedule.

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mrsv/numerics.hpp"

namespace mrsv {

// Linear warmup from 0 to peak, then cosine decay to 0.02 * peak at `total`.
inline double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double peak) {
  if (warmup >= total) throw std::invalid_argument(cat("lr_schedule: warmup ", warmup, " >= total ", total));
  if (step > total) throw std::invalid_argument(cat("lr_schedule: step ", step, " beyond total ", total));
  if (step < warmup) return peak * double(step) / double(warmup);
  const double progress = double(step - warmup) / double(total - warmup);
  return peak * (0.02 + 0.98 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// Replaces NaN and +-Inf entries with 0; returns how many were replaced.
template <class Real>
std::size_t sanitize_grads(std::span<Real> g) {
  std::size_t n = 0;
  for (auto& v : g)
    if (!std::isfinite(v)) v = Real(0), ++n;
  return n;
}

template <class Real>
std::size_t sanitize_grads(ParamStore<Real>& params) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) n += sanitize_grads(std::span<Real>(params[i].grad.data));
  return n;
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.1;
};

template <class Real>
class AdamW {
 public:
  explicit AdamW(const ParamStore<Real>& params, AdamWOptions opt = {}) : opt_(opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].value.shape);
      v_.emplace_back(params[i].value.shape);
    }
  }

  // One update from the accumulated gradients. Parameters flagged `decay`
  // shrink by lr * weight_decay of their value, independent of the gradient.
  void step(ParamStore<Real>& params, double lr) {
    if (params.size() != m_.size())
      throw ShapeError(cat("AdamW: optimizer holds ", m_.size(), " moments, model has ", params.size(), " parameters"));
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, double(t_)), c2 = 1.0 - std::pow(opt_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.grad.shape != p.value.shape || m_[i].shape != p.value.shape)
        throw ShapeError(cat("AdamW: shape mismatch for ", p.name));
      const double decay = p.decay ? lr * opt_.weight_decay : 0.0;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad.data[j];
        const double mj = opt_.beta1 * double(m[j]) + (1.0 - opt_.beta1) * g;
        const double vj = opt_.beta2 * double(v[j]) + (1.0 - opt_.beta2) * g * g;
        m[j] = static_cast<Real>(mj);
        v[j] = static_cast<Real>(vj);
        const double x = double(p.value.data[j]);
        p.value.data[j] = static_cast<Real>(x - decay * x - lr * (mj / c1) / (std::sqrt(vj / c2) + opt_.eps));
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::vector<Tensor<Real>>& first_moments() { return m_; }
  std::vector<Tensor<Real>>& second_moments() { return v_; }

  // Named views for checkpointing: "m/<param>" and "v/<param>".
  std::vector<std::pair<std::string, const Tensor<Real>*>> named_state(const ParamStore<Real>& params) const {
    std::vector<std::pair<std::string, const Tensor<Real>*>> out;
    for (std::size_t i = 0; i < params.size(); ++i) out.emplace_back("m/" + params[i].name, &m_[i]);
    for (std::size_t i = 0; i < params.size(); ++i) out.emplace_back("v/" + params[i].name, &v_[i]);
    return out;
  }

 private:
  AdamWOptions opt_;
  std::vector<Tensor<Real>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace mrsv
