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

#include "mrsv/numerics/attention.hpp"
#include "mrsv/numerics/gradcheck.hpp"
#include "mrsv/numerics/ops.hpp"
#include "mrsv/numerics/tape.hpp"
#include "mrsv/numerics/tensor.hpp"

namespace mrsv {

// Unit-norm copy of a plain vector; throws on (near) zero vectors.
template <class Real>
std::vector<Real> l2_normalize(std::vector<Real> x) {
  double s = 0;
  for (Real v : x) s += static_cast<double>(v) * static_cast<double>(v);
  const double n = std::sqrt(s);
  if (!(n >= 1e-12)) throw DegenerateVectorError(cat("l2_normalize: norm ", n));
  for (auto& v : x) v = static_cast<Real>(v / n);
  return x;
}

}  // namespace mrsv
