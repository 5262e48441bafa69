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

// Reverse-mode differentiation over an explicit, per-forward-pass tape.
//
// Every operation takes the tape it records on. An output requires a gradient
// when any input does; only those outputs are recorded. Tape::backward replays
// the recorded adjoints in reverse order of recording.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "xgrain/kernels.hpp"
#include "xgrain/tensor.hpp"

namespace xgrain {

class Tape {
 public:
  using Adjoint = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(const Tensor& output, Adjoint adjoint);

  /// Seeds d(loss)/d(loss) = 1 and runs every adjoint in reverse. Gradients
  /// accumulate into leaves, so callers zero parameter grads between steps.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    Adjoint adjoint;
  };
  std::vector<Node> nodes_;
};

namespace ops {

// Elementwise binary ops. `b` broadcasts when it has one element or when its
// shape is a suffix of `a`'s shape; the result has `a`'s shape.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);
// Same-shape only. Ties send the gradient to `a`.
Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b);
Tensor maximum(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double value);
Tensor neg(Tape& tape, const Tensor& x);
Tensor exp(Tape& tape, const Tensor& x);
Tensor log(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor abs(Tape& tape, const Tensor& x);
Tensor clamp_min(Tape& tape, const Tensor& x, double lo);

/// a [..., m, k] x b [k, n] or b [..., k, n] with matching batch dims.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// x [..., in] * weight [in, out] + bias [out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Swaps the last two dims.
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, const Shape& shape);

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
/// Normalizes over the last dim. gamma and beta have that dim's size.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);
/// Unit L2 norm along the last dim.
Tensor l2_normalize(Tape& tape, const Tensor& x, double eps = 1e-12);

/// Rows of table [vocab, hidden]; every id must be < vocab.
Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int64_t> ids);
/// Rows of x along dim 0, in the given order. Indices may repeat.
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows);
Tensor concat(Tape& tape, std::span<const Tensor> parts, std::size_t axis);
Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
Tensor sum_axis(Tape& tape, const Tensor& x, std::size_t axis);
Tensor mean_axis(Tape& tape, const Tensor& x, std::size_t axis);

/// Mean over rows of -log softmax(logits)[target]. logits is [rows, classes].
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets);
/// Mean over rows of -sum_c target[c] * log softmax(logits)[c]. No gradient
/// flows into `target`.
Tensor cross_entropy(Tape& tape, const Tensor& logits, const Tensor& target);

/// Packed attention probabilities for q [rows, hidden] against k [rows, hidden].
Tensor attention_probs(Tape& tape, const Tensor& q, const Tensor& k,
                       std::shared_ptr<const kernels::AttentionLayout> layout);
/// Weighted values: [layout.query_rows(), hidden].
Tensor attention_apply(Tape& tape, const Tensor& probs, const Tensor& v,
                       std::shared_ptr<const kernels::AttentionLayout> layout);

}  // namespace ops
}  // namespace xgrain
