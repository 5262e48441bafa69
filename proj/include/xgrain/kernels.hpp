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

// Compute kernels shared by the autograd engine.
//
// Every kernel exists twice: the OpenMP path in namespace `kernels` used by
// the engine, and a plain serial loop in `kernels::reference` that the tests
// and the benchmark compare against. Both paths assign each output element to
// exactly one thread with a fixed reduction order, so results do not depend
// on the thread count.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace xgrain::kernels {

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
/// op(A) is m x k, op(B) is k x n. Leading dimensions are row strides.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

template <class T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols);

/// y = (x - mean) * rstd * gamma + beta over the last dimension. Saves mean
/// and rstd per row for the backward pass.
template <class T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
                        std::size_t rows, std::size_t cols, T eps);

/// Accumulates into dx, dgamma and dbeta.
template <class T>
void layer_norm_backward(const T* dy, const T* x, const T* gamma, const T* mean,
                         const T* rstd, T* dx, T* dgamma, T* dbeta, std::size_t rows,
                         std::size_t cols);

/// One query block attending to one key block. Query blocks of different
/// segments must not overlap; key blocks may be shared.
struct AttentionSegment {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t k_begin = 0;
  std::size_t k_len = 0;
};

/// Ragged multi-head attention over packed [rows, hidden] matrices.
/// Probabilities are stored per segment, head-major: heads x q_len x k_len.
class AttentionLayout {
 public:
  AttentionLayout() = default;
  AttentionLayout(std::vector<AttentionSegment> segments, std::size_t heads,
                  std::vector<std::uint8_t> key_valid = {});

  const std::vector<AttentionSegment>& segments() const { return segments_; }
  std::size_t heads() const { return heads_; }
  /// Empty means every key row is valid.
  const std::vector<std::uint8_t>& key_valid() const { return key_valid_; }
  std::size_t prob_offset(std::size_t segment) const { return prob_offset_[segment]; }
  std::size_t prob_size() const { return prob_size_; }
  std::size_t query_rows() const { return query_rows_; }
  std::size_t key_rows() const { return key_rows_; }

  /// Offset of probs[segment][head][qi][kj] in the packed buffer.
  std::size_t prob_index(std::size_t segment, std::size_t head, std::size_t qi,
                         std::size_t kj) const {
    const auto& s = segments_[segment];
    return prob_offset_[segment] + (head * s.q_len + qi) * s.k_len + kj;
  }

 private:
  std::vector<AttentionSegment> segments_;
  std::size_t heads_ = 1;
  std::vector<std::uint8_t> key_valid_;
  std::vector<std::size_t> prob_offset_;
  std::size_t prob_size_ = 0;
  std::size_t query_rows_ = 0;
  std::size_t key_rows_ = 0;
};

/// probs = softmax(q k^T / sqrt(head_dim)) with invalid keys excluded. A row
/// with no valid key is all zero.
template <class T>
void attention_probs_forward(const T* q, const T* k, std::size_t hidden,
                             const AttentionLayout& layout, T* probs);

/// Accumulates into dq and dk.
template <class T>
void attention_probs_backward(const T* dprobs, const T* probs, const T* q, const T* k,
                              std::size_t hidden, const AttentionLayout& layout, T* dq, T* dk);

/// out = probs v, per segment and head. Overwrites the query rows of out.
template <class T>
void attention_apply_forward(const T* probs, const T* v, std::size_t hidden,
                             const AttentionLayout& layout, T* out);

/// Accumulates into dprobs and dv.
template <class T>
void attention_apply_backward(const T* dout, const T* probs, const T* v, std::size_t hidden,
                              const AttentionLayout& layout, T* dprobs, T* dv);

namespace reference {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

template <class T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols);

template <class T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
                        std::size_t rows, std::size_t cols, T eps);

template <class T>
void layer_norm_backward(const T* dy, const T* x, const T* gamma, const T* mean,
                         const T* rstd, T* dx, T* dgamma, T* dbeta, std::size_t rows,
                         std::size_t cols);

template <class T>
void attention_probs_forward(const T* q, const T* k, std::size_t hidden,
                             const AttentionLayout& layout, T* probs);

template <class T>
void attention_probs_backward(const T* dprobs, const T* probs, const T* q, const T* k,
                              std::size_t hidden, const AttentionLayout& layout, T* dq, T* dk);

template <class T>
void attention_apply_forward(const T* probs, const T* v, std::size_t hidden,
                             const AttentionLayout& layout, T* out);

template <class T>
void attention_apply_backward(const T* dout, const T* probs, const T* v, std::size_t hidden,
                              const AttentionLayout& layout, T* dprobs, T* dv);

}  // namespace reference

/// Number of worker threads the OpenMP kernels use. Reads XGRAIN_THREADS once.
int configure_threads();

}  // namespace xgrain::kernels
