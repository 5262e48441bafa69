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

// Central finite-difference gradient checker. Test-only; it drives the
// forward function and never looks at the tape's adjoints.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "xgrain/autograd.hpp"

namespace xgrain::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

using LossFn = std::function<Tensor(Tape&)>;

/// Compares d(loss)/d(input) from the tape with central differences for every
/// element of every input (or at most `max_per_input` evenly spaced ones).
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheckResult grad_check(const LossFn& loss_fn, std::vector<Tensor> inputs,
                                  double step = 1e-5, std::size_t max_per_input = 0,
                                  double floor = 1e-4) {
  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }
  GradCheckResult result;
  for (auto& t : inputs) {
    const std::vector<double> analytic = t.grad_vector();
    const std::size_t n = t.numel();
    const std::size_t stride =
        (max_per_input == 0 || n <= max_per_input) ? 1 : (n + max_per_input - 1) / max_per_input;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = t.at(i);
      auto eval = [&](double v) {
        t.set(i, v);
        Tape tape;
        return loss_fn(tape).item();
      };
      const double plus = eval(orig + step);
      const double minus = eval(orig - step);
      t.set(i, orig);
      const double numeric = (plus - minus) / (2.0 * step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace xgrain::testing
