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
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mrsv/numerics/tensor.hpp"

namespace mrsv {

struct GradCheckReport {
  double max_relative_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t coordinates_checked = 0;
};

struct NonFiniteLossError : std::runtime_error {
  NonFiniteLossError(const std::string& param, std::size_t index)
      : std::runtime_error(cat("finite_diff_check: non-finite loss when perturbing ", param, "[", index, "]")),
        parameter(param),
        index(index) {}
  std::string parameter;
  std::size_t index;
};

// Compares analytic parameter gradients with central differences.
//
// `loss(with_grad)` evaluates the scalar loss from the current parameter
// values; when with_grad is true it must also leave d(loss)/d(param) in each
// Parameter::grad (the checker zeroes them first). The value is a long
// double so callers can return it with less rounding than Real. Relative
// error per coordinate is |a - n| / max(|a|, |n|, 1e-8). With
// max_per_tensor == 0 every coordinate is checked; otherwise a seeded sample
// of that many coordinates per parameter tensor.
template <class Real>
GradCheckReport finite_diff_check(ParamStore<Real>& params, const std::function<long double(bool)>& loss, double step,
                                  std::size_t max_per_tensor = 0, std::uint64_t seed = 0) {
  params.zero_grad();
  const long double base = loss(true);
  if (!std::isfinite(static_cast<double>(base))) throw NonFiniteLossError("<unperturbed>", 0);
  std::vector<std::vector<Real>> analytic;
  for (std::size_t p = 0; p < params.size(); ++p) analytic.push_back(params[p].grad.data);

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    std::vector<std::size_t> coords(param.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_per_tensor != 0 && coords.size() > max_per_tensor) {
      rng.shuffle(coords);
      coords.resize(max_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const Real saved = param.value.data[i];
      param.value.data[i] = saved + static_cast<Real>(step);
      const long double up = loss(false);
      param.value.data[i] = saved - static_cast<Real>(step);
      const long double down = loss(false);
      param.value.data[i] = saved;
      if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down)))
        throw NonFiniteLossError(param.name, i);
      const double numeric = static_cast<double>((up - down) / (2 * static_cast<long double>(step)));
      const double a = static_cast<double>(analytic[p][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++report.coordinates_checked;
      if (err > report.max_relative_error || report.coordinates_checked == 1) {
        report.max_relative_error = err;
        report.worst_parameter = param.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mrsv
