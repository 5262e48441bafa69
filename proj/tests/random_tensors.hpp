// Copyright 2026 The xgrain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Seeded random tensors for gradient checks.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "xgrain/autograd.hpp"

namespace xgrain::testing {

inline Tensor randn(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(v, shape);
}

// Values bounded away from zero so kinked ops are differentiable there.
inline Tensor away_from_zero(const Shape& shape, std::uint64_t seed) {
  Tensor t = randn(shape, seed);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double v = t.at(i);
    t.set(i, v >= 0 ? v + 0.1 : v - 0.1);
  }
  return t;
}

inline Tensor positive(const Shape& shape, std::uint64_t seed) {
  Tensor t = randn(shape, seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, 0.5 + std::abs(t.at(i)));
  return t;
}

// Weighted sum with fixed random weights, so every output element matters.
inline Tensor probe(Tape& tape, const Tensor& y, std::uint64_t seed = 99) {
  return ops::sum(tape, ops::mul(tape, y, randn(y.shape(), seed)));
}

}  // namespace xgrain::testing
