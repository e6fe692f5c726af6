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

#include <algorithm>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrsv/numerics/tensor.hpp"

namespace mrsv {

template <class Real>
class Tape;

// Handle to a value recorded on a Tape.
template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return tape->value(*this); }
  const std::vector<std::size_t>& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  Real item() const { return value().item(); }
};

// One primitive application in the computation record: its output value,
// the gradient buffer filled during backward, and the rule that pushes that
// gradient to its inputs.
template <class Real>
struct DiffTensor {
  using BackwardFn = std::function<void(Tape<Real>&, std::size_t self)>;

  Tensor<Real> value;
  std::vector<Real> grad;  // empty until reached by backward
  std::string_view op;
  std::vector<std::size_t> inputs;
  BackwardFn backward;
  Parameter<Real>* param = nullptr;
  bool requires_grad = true;
};

// Append-only computation record. Nodes are stored in creation order, which is
// a topological order, so backward is a single reverse sweep. Recorded values
// are never mutated after creation.
template <class Real>
class Tape {
 public:
  using Node = DiffTensor<Real>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> leaf(Tensor<Real> t) { return push(std::move(t), "leaf", {}, nullptr); }

  Var<Real> constant(Tensor<Real> t) {
    auto v = push(std::move(t), "const", {}, nullptr);
    nodes_[v.id].requires_grad = false;
    return v;
  }

  // Leaf bound to a parameter. Each parameter is recorded at most once per tape.
  Var<Real> param(Parameter<Real>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    auto v = push(p.value, "param", {}, nullptr);
    nodes_[v.id].param = &p;
    param_nodes_[&p] = v.id;
    return v;
  }

  Var<Real> record(Tensor<Real> value, std::string_view op, std::vector<std::size_t> inputs,
                   typename Node::BackwardFn fn) {
    return push(std::move(value), op, std::move(inputs), std::move(fn));
  }

  const Tensor<Real>& value(Var<Real> v) const { return nodes_.at(v.id).value; }
  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, zero-initialised on first touch. Called by
  // backward rules to accumulate into their inputs.
  Real* grad_accum(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
    return n.grad.data();
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient of a node after backward; all zeros if the node was not reached.
  std::vector<Real> grad(Var<Real> v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<Real>(n.value.size(), Real(0));
    return n.grad;
  }

  void backward(Var<Real> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss).size() != 1)
      throw ShapeError(cat("backward: loss must be scalar, got shape ", shape_str(value(loss).shape)));
    Tensor<Real> one(value(loss).shape, {Real(1)});
    std::pair<Var<Real>, const Tensor<Real>*> seed{loss, &one};
    backward(std::span(&seed, 1));
  }

  // Backward from externally supplied output gradients (vector-Jacobian
  // products). Used to chain a batch-level loss record into per-example records.
  void backward(std::span<const std::pair<Var<Real>, const Tensor<Real>*>> seeds) {
    if (done_) throw std::logic_error("backward: record already consumed");
    std::size_t top = 0;
    for (auto& [v, g] : seeds) {
      if (g->size() != value(v).size())
        throw ShapeError(cat("backward: seed shape ", shape_str(g->shape), " vs value shape ",
                             shape_str(value(v).shape)));
      Real* dst = grad_accum(v.id);
      for (std::size_t i = 0; i < g->size(); ++i) dst[i] += g->data[i];
      top = std::max(top, v.id + 1);
    }
    for (std::size_t i = top; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    done_ = true;
  }

  // Adds the gradients that reached parameter leaves into Parameter::grad.
  void accumulate_param_grads() {
    for (auto& [p, id] : param_nodes_) {
      const auto& g = nodes_[id].grad;
      if (g.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) p->grad.data[i] += g[i];
    }
  }

  // Parameter leaves in creation order (deterministic iteration).
  std::vector<std::pair<Parameter<Real>*, std::size_t>> param_leaves() const {
    std::vector<std::pair<Parameter<Real>*, std::size_t>> out(param_nodes_.begin(), param_nodes_.end());
    std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.second < b.second; });
    return out;
  }

 private:
  Var<Real> push(Tensor<Real> value, std::string_view op, std::vector<std::size_t> inputs,
                 typename Node::BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<Real>*, std::size_t> param_nodes_;
  bool done_ = false;
};

}  // namespace mrsv
