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

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrsv/common.hpp"

namespace mrsv {

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

// Dense row-major n-dimensional array. Rank-0 tensors are scalars.
template <class Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_size(shape), Real(0)) {}
  Tensor(std::vector<std::size_t> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape))
      throw ShapeError(cat("Tensor: data length ", data.size(), " does not match shape ", shape_str(shape)));
  }

  static Tensor scalar(Real v) { return Tensor({}, {v}); }
  static Tensor matrix(std::size_t r, std::size_t c) { return Tensor({r, c}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  // Rank-2 view: rank-1 tensors are a single row, scalars are 1x1.
  std::size_t rows() const { return shape.size() >= 2 ? size() / shape.back() : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  Real& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  Real item() const {
    if (size() != 1) throw ShapeError(cat("item() on tensor of shape ", shape_str(shape)));
    return data[0];
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

// A trainable named tensor. grad accumulates across backward passes until the
// optimizer clears it.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool decay = true;  // subject to weight decay
};

template <class Real>
class ParamStore {
 public:
  Parameter<Real>& add(const std::string& name, std::vector<std::size_t> shape, bool decay = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<Real>>();
    p->name = name;
    p->value = Tensor<Real>(shape);
    p->grad = Tensor<Real>(std::move(shape));
    p->decay = decay;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Real>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<Real>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), Real(0));
  }

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mrsv
