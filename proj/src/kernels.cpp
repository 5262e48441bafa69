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

#include "xgrain/kernels.hpp"

#include "fastmath.hpp"

#include <cblas.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>

namespace xgrain::kernels {

AttentionLayout::AttentionLayout(std::vector<AttentionSegment> segments, std::size_t heads,
                                 std::vector<std::uint8_t> key_valid)
    : segments_(std::move(segments)), heads_(heads), key_valid_(std::move(key_valid)) {
  if (heads_ == 0) throw std::invalid_argument("attention layout: heads must be positive");
  prob_offset_.reserve(segments_.size());
  for (const auto& s : segments_) {
    prob_offset_.push_back(prob_size_);
    prob_size_ += heads_ * s.q_len * s.k_len;
    query_rows_ = std::max(query_rows_, s.q_begin + s.q_len);
    key_rows_ = std::max(key_rows_, s.k_begin + s.k_len);
  }
  if (!key_valid_.empty() && key_valid_.size() < key_rows_) {
    throw std::invalid_argument("attention layout: key mask shorter than key rows");
  }
}

int configure_threads() {
  static const int threads = [] {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("XGRAIN_THREADS")) {
      const int requested = std::atoi(env);
      if (requested > 0) n = requested;
    }
    omp_set_num_threads(n);
    // Kernels parallelise above BLAS; nested BLAS threading would oversubscribe.
    openblas_set_num_threads(1);
    return n;
  }();
  return threads;
}

namespace {

template <class T>
void blas_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
               std::size_t ldc) {
  const auto opa = ta ? CblasTrans : CblasNoTrans;
  const auto opb = tb ? CblasTrans : CblasNoTrans;
  const auto im = static_cast<blasint>(m);
  const auto in = static_cast<blasint>(n);
  const auto ik = static_cast<blasint>(k);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, opa, opb, im, in, ik, alpha, a, static_cast<blasint>(lda), b,
                static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
  } else {
    cblas_dgemm(CblasRowMajor, opa, opb, im, in, ik, alpha, a, static_cast<blasint>(lda), b,
                static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
  }
}

template <class T>
bool key_ok(const AttentionLayout& layout, std::size_t row) {
  const auto& valid = layout.key_valid();
  return valid.empty() || valid[row] != 0;
}

template <class T>
void masked_softmax_row(T* row, std::size_t len, const AttentionLayout& layout,
                        std::size_t k_begin) {
  const std::uint8_t* valid = layout.key_valid().empty() ? nullptr : layout.key_valid().data() + k_begin;
  T max_v = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < len; ++j) {
    if (!valid || valid[j]) max_v = std::max(max_v, row[j]);
  }
  if (!std::isfinite(max_v)) {
    std::fill(row, row + len, T(0));
    return;
  }
  for (std::size_t j = 0; j < len; ++j) row[j] = fastmath::exp(row[j] - max_v);
  if (valid) {
    for (std::size_t j = 0; j < len; ++j) row[j] = valid[j] ? row[j] : T(0);
  }
  T total = 0;
  for (std::size_t j = 0; j < len; ++j) total += row[j];
  const T inv = T(1) / total;
  for (std::size_t j = 0; j < len; ++j) row[j] *= inv;
}

}  // namespace

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = beta == T(0) ? T(0) : beta * c[i * ldc + j];
    }
    return;
  }
  blas_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    const T max_v = *std::max_element(xr, xr + cols);
    for (std::size_t j = 0; j < cols; ++j) yr[j] = fastmath::exp(xr[j] - max_v);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) total += yr[j];
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

template <class T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
                        std::size_t rows, std::size_t cols, T eps) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T mu = 0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    T* yr = y + r * cols;
    for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
  }
}

template <class T>
void layer_norm_backward(const T* dy, const T* x, const T* gamma, const T* mean,
                         const T* rstd, T* dx, T* dgamma, T* dbeta, std::size_t rows,
                         std::size_t cols) {
  const T inv_n = T(1) / static_cast<T>(cols);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    const T* dyr = dy + r * cols;
    T sum_g = 0;
    T sum_gx = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T xhat = (xr[j] - mean[r]) * rstd[r];
      const T g = dyr[j] * gamma[j];
      sum_g += g;
      sum_gx += g * xhat;
    }
    T* dxr = dx + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const T xhat = (xr[j] - mean[r]) * rstd[r];
      const T g = dyr[j] * gamma[j];
      dxr[j] += rstd[r] * (g - sum_g * inv_n - xhat * sum_gx * inv_n);
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t j = 0; j < cols; ++j) {
    T dg = 0;
    T db = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const T xhat = (x[r * cols + j] - mean[r]) * rstd[r];
      dg += dy[r * cols + j] * xhat;
      db += dy[r * cols + j];
    }
    dgamma[j] += dg;
    dbeta[j] += db;
  }
}

template <class T>
void attention_probs_forward(const T* q, const T* k, std::size_t hidden,
                             const AttentionLayout& layout, T* probs) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto& segs = layout.segments();
  const std::size_t work = segs.size() * heads;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t w = 0; w < work; ++w) {
    const std::size_t s = w / heads;
    const std::size_t h = w % heads;
    const auto& seg = segs[s];
    if (seg.q_len == 0 || seg.k_len == 0) continue;
    T* p = probs + layout.prob_index(s, h, 0, 0);
    gemm<T>(false, true, seg.q_len, seg.k_len, d, scale, q + seg.q_begin * hidden + h * d,
            hidden, k + seg.k_begin * hidden + h * d, hidden, T(0), p, seg.k_len);
    for (std::size_t i = 0; i < seg.q_len; ++i) {
      masked_softmax_row(p + i * seg.k_len, seg.k_len, layout, seg.k_begin);
    }
  }
}

template <class T>
void attention_probs_backward(const T* dprobs, const T* probs, const T* q, const T* k,
                              std::size_t hidden, const AttentionLayout& layout, T* dq,
                              T* dk) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto& segs = layout.segments();
  // Heads own disjoint column blocks of dq/dk; segments run in order so that
  // shared key blocks accumulate deterministically.
#pragma omp parallel for schedule(static)
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<T> ds;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const auto& seg = segs[s];
      if (seg.q_len == 0 || seg.k_len == 0) continue;
      const std::size_t base = layout.prob_index(s, h, 0, 0);
      const T* p = probs + base;
      const T* dp = dprobs + base;
      ds.assign(seg.q_len * seg.k_len, T(0));
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < seg.k_len; ++j) dot += dp[i * seg.k_len + j] * p[i * seg.k_len + j];
        for (std::size_t j = 0; j < seg.k_len; ++j) {
          ds[i * seg.k_len + j] = p[i * seg.k_len + j] * (dp[i * seg.k_len + j] - dot) * scale;
        }
      }
      gemm<T>(false, false, seg.q_len, d, seg.k_len, T(1), ds.data(), seg.k_len,
              k + seg.k_begin * hidden + h * d, hidden, T(1), dq + seg.q_begin * hidden + h * d,
              hidden);
      gemm<T>(true, false, seg.k_len, d, seg.q_len, T(1), ds.data(), seg.k_len,
              q + seg.q_begin * hidden + h * d, hidden, T(1), dk + seg.k_begin * hidden + h * d,
              hidden);
    }
  }
}

template <class T>
void attention_apply_forward(const T* probs, const T* v, std::size_t hidden,
                             const AttentionLayout& layout, T* out) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const auto& segs = layout.segments();
  const std::size_t work = segs.size() * heads;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t w = 0; w < work; ++w) {
    const std::size_t s = w / heads;
    const std::size_t h = w % heads;
    const auto& seg = segs[s];
    if (seg.q_len == 0) continue;
    gemm<T>(false, false, seg.q_len, d, seg.k_len, T(1), probs + layout.prob_index(s, h, 0, 0),
            seg.k_len, v + seg.k_begin * hidden + h * d, hidden, T(0),
            out + seg.q_begin * hidden + h * d, hidden);
  }
}

template <class T>
void attention_apply_backward(const T* dout, const T* probs, const T* v, std::size_t hidden,
                              const AttentionLayout& layout, T* dprobs, T* dv) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const auto& segs = layout.segments();
#pragma omp parallel for schedule(static)
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const auto& seg = segs[s];
      if (seg.q_len == 0 || seg.k_len == 0) continue;
      const std::size_t base = layout.prob_index(s, h, 0, 0);
      const T* g = dout + seg.q_begin * hidden + h * d;
      gemm<T>(false, true, seg.q_len, seg.k_len, d, T(1), g, hidden,
              v + seg.k_begin * hidden + h * d, hidden, T(1), dprobs + base, seg.k_len);
      gemm<T>(true, false, seg.k_len, d, seg.q_len, T(1), probs + base, seg.k_len, g, hidden,
              T(1), dv + seg.k_begin * hidden + h * d, hidden);
    }
  }
}

namespace reference {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
    }
  }
}

template <class T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T max_v = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j) max_v = std::max(max_v, x[r * cols + j]);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(x[r * cols + j] - max_v);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - max_v) / total;
  }
}

template <class T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
                        std::size_t rows, std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[r * cols + j];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[r * cols + j] - mu) * (x[r * cols + j] - mu);
    var /= static_cast<T>(cols);
    mean[r] = mu;
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      y[r * cols + j] = (x[r * cols + j] - mu) * rstd[r] * gamma[j] + beta[j];
    }
  }
}

template <class T>
void layer_norm_backward(const T* dy, const T* x, const T* gamma, const T* mean,
                         const T* rstd, T* dx, T* dgamma, T* dbeta, std::size_t rows,
                         std::size_t cols) {
  const T n = static_cast<T>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    T sum_g = 0;
    T sum_gx = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T xhat = (x[r * cols + j] - mean[r]) * rstd[r];
      sum_g += dy[r * cols + j] * gamma[j];
      sum_gx += dy[r * cols + j] * gamma[j] * xhat;
      dgamma[j] += dy[r * cols + j] * xhat;
      dbeta[j] += dy[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const T xhat = (x[r * cols + j] - mean[r]) * rstd[r];
      dx[r * cols + j] += rstd[r] * (dy[r * cols + j] * gamma[j] - sum_g / n - xhat * sum_gx / n);
    }
  }
}

template <class T>
void attention_probs_forward(const T* q, const T* k, std::size_t hidden,
                             const AttentionLayout& layout, T* probs) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto& segs = layout.segments();
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto& seg = segs[s];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        T* row = probs + layout.prob_index(s, h, i, 0);
        for (std::size_t j = 0; j < seg.k_len; ++j) {
          T acc = 0;
          for (std::size_t c = 0; c < d; ++c) {
            acc += q[(seg.q_begin + i) * hidden + h * d + c] * k[(seg.k_begin + j) * hidden + h * d + c];
          }
          row[j] = acc * scale;
        }
        const auto& valid = layout.key_valid();
        auto ok = [&](std::size_t j) { return valid.empty() || valid[seg.k_begin + j] != 0; };
        T max_v = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seg.k_len; ++j) {
          if (ok(j)) max_v = std::max(max_v, row[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < seg.k_len; ++j) {
          row[j] = ok(j) && std::isfinite(max_v) ? std::exp(row[j] - max_v) : T(0);
          total += row[j];
        }
        for (std::size_t j = 0; j < seg.k_len; ++j) row[j] = total > 0 ? row[j] / total : T(0);
      }
    }
  }
}

template <class T>
void attention_probs_backward(const T* dprobs, const T* probs, const T* q, const T* k,
                              std::size_t hidden, const AttentionLayout& layout, T* dq,
                              T* dk) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto& segs = layout.segments();
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto& seg = segs[s];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        const std::size_t base = layout.prob_index(s, h, i, 0);
        T dot = 0;
        for (std::size_t j = 0; j < seg.k_len; ++j) dot += dprobs[base + j] * probs[base + j];
        for (std::size_t j = 0; j < seg.k_len; ++j) {
          const T g = probs[base + j] * (dprobs[base + j] - dot) * scale;
          for (std::size_t c = 0; c < d; ++c) {
            dq[(seg.q_begin + i) * hidden + h * d + c] += g * k[(seg.k_begin + j) * hidden + h * d + c];
            dk[(seg.k_begin + j) * hidden + h * d + c] += g * q[(seg.q_begin + i) * hidden + h * d + c];
          }
        }
      }
    }
  }
}

template <class T>
void attention_apply_forward(const T* probs, const T* v, std::size_t hidden,
                             const AttentionLayout& layout, T* out) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const auto& segs = layout.segments();
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto& seg = segs[s];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
          T acc = 0;
          for (std::size_t j = 0; j < seg.k_len; ++j) {
            acc += probs[layout.prob_index(s, h, i, j)] * v[(seg.k_begin + j) * hidden + h * d + c];
          }
          out[(seg.q_begin + i) * hidden + h * d + c] = acc;
        }
      }
    }
  }
}

template <class T>
void attention_apply_backward(const T* dout, const T* probs, const T* v, std::size_t hidden,
                              const AttentionLayout& layout, T* dprobs, T* dv) {
  const std::size_t heads = layout.heads();
  const std::size_t d = hidden / heads;
  const auto& segs = layout.segments();
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto& seg = segs[s];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        for (std::size_t j = 0; j < seg.k_len; ++j) {
          const std::size_t idx = layout.prob_index(s, h, i, j);
          for (std::size_t c = 0; c < d; ++c) {
            const T g = dout[(seg.q_begin + i) * hidden + h * d + c];
            dprobs[idx] += g * v[(seg.k_begin + j) * hidden + h * d + c];
            dv[(seg.k_begin + j) * hidden + h * d + c] += probs[idx] * g;
          }
        }
      }
    }
  }
}

}  // namespace reference

#define XGRAIN_INSTANTIATE(T)                                                                     \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*,          \
                        std::size_t, const T*, std::size_t, T, T*, std::size_t);                  \
  template void softmax_rows<T>(const T*, T*, std::size_t, std::size_t);                          \
  template void layer_norm_forward<T>(const T*, const T*, const T*, T*, T*, T*, std::size_t,      \
                                      std::size_t, T);                                            \
  template void layer_norm_backward<T>(const T*, const T*, const T*, const T*, const T*, T*, T*,  \
                                       T*, std::size_t, std::size_t);                             \
  template void attention_probs_forward<T>(const T*, const T*, std::size_t,                       \
                                           const AttentionLayout&, T*);                           \
  template void attention_probs_backward<T>(const T*, const T*, const T*, const T*, std::size_t,  \
                                            const AttentionLayout&, T*, T*);                      \
  template void attention_apply_forward<T>(const T*, const T*, std::size_t,                       \
                                           const AttentionLayout&, T*);                           \
  template void attention_apply_backward<T>(const T*, const T*, const T*, std::size_t,            \
                                            const AttentionLayout&, T*, T*);

XGRAIN_INSTANTIATE(float)
XGRAIN_INSTANTIATE(double)

namespace reference {
XGRAIN_INSTANTIATE(float)
XGRAIN_INSTANTIATE(double)
}  // namespace reference

#undef XGRAIN_INSTANTIATE

}  // namespace xgrain::kernels
