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

#include "xgrain/autograd.hpp"

#include "fastmath.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace xgrain {

void Tape::record(const Tensor& output, Adjoint adjoint) {
  if (!output.requires_grad()) return;
  nodes_.push_back({output.impl(), std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor that requires grad");
  }
  dispatch(loss.dtype(), [&]<class T>() { loss.impl()->ensure_grad<T>()[0] += T(1); });
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    dispatch(it->output->dtype, [&]<class T>() { it->output->ensure_grad<T>(); });
    it->adjoint();
  }
}

namespace ops {
namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

void same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": mixed dtypes " + to_string(a.dtype()) + " and " +
                        to_string(b.dtype()));
  }
}

Tensor make_output(const Shape& shape, DType dtype, bool requires_grad) {
  Tensor out = Tensor::zeros(shape, dtype);
  out.set_requires_grad(requires_grad);
  return out;
}

bool broadcastable(const Shape& a, const Shape& b) {
  if (shape_numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class Fwd, class Deriv>
Tensor unary(Tape& tape, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = make_output(x.shape(), x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
    tape.record(out, [X = x.impl(), O = out.impl(), deriv]() {
      const auto& xv = X->values<T>();
      const auto& yv = O->values<T>();
      const auto& g = O->grads<T>();
      T* gx = X->ensure_grad<T>();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
  });
  return out;
}

// Visits (i, i mod nb) for i < na without a division per element; nb divides na.
template <class F>
void broadcast_loop(std::size_t na, std::size_t nb, F&& f) {
  if (nb == na) {
    for (std::size_t i = 0; i < na; ++i) f(i, i);
  } else if (nb == 1) {
    for (std::size_t i = 0; i < na; ++i) f(i, 0);
  } else {
    for (std::size_t base = 0; base < na; base += nb) {
      for (std::size_t j = 0; j < nb; ++j) f(base + j, j);
    }
  }
}

// dfa/dfb return the partial derivative of the result w.r.t. a and b.
template <class Fwd, class DA, class DB>
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA dfa,
              DB dfb) {
  same_dtype(a, b, op);
  if (!broadcastable(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) +
                         " onto " + shape_string(a.shape()));
  }
  Tensor out = make_output(a.shape(), a.dtype(), a.requires_grad() || b.requires_grad());
  dispatch(a.dtype(), [&]<class T>() {
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto ys = out.data<T>();
    broadcast_loop(as.size(), bs.size(), [&](std::size_t i, std::size_t j) { ys[i] = fwd(as[i], bs[j]); });
    tape.record(out, [A = a.impl(), B = b.impl(), O = out.impl(), dfa, dfb]() {
      const auto& av = A->values<T>();
      const auto& bv = B->values<T>();
      const auto& yv = O->values<T>();
      const auto& g = O->grads<T>();
      const std::size_t n = bv.size();
      if (A->requires_grad) {
        T* ga = A->ensure_grad<T>();
        broadcast_loop(av.size(), n, [&](std::size_t i, std::size_t j) {
          ga[i] += g[i] * dfa(av[i], bv[j], yv[i]);
        });
      }
      if (B->requires_grad) {
        T* gb = B->ensure_grad<T>();
        broadcast_loop(av.size(), n, [&](std::size_t i, std::size_t j) {
          gb[j] += g[i] * dfb(av[i], bv[j], yv[i]);
        });
      }
    });
  });
  return out;
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "add", [](auto x, auto y) { return x + y; },
      [](auto x, auto, auto) { return decltype(x)(1); },
      [](auto x, auto, auto) { return decltype(x)(1); });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "sub", [](auto x, auto y) { return x - y; },
      [](auto x, auto, auto) { return decltype(x)(1); },
      [](auto x, auto, auto) { return decltype(x)(-1); });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "mul", [](auto x, auto y) { return x * y; },
      [](auto, auto y, auto) { return y; }, [](auto x, auto, auto) { return x; });
}

Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "div", [](auto x, auto y) { return x / y; },
      [](auto, auto y, auto) { return decltype(y)(1) / y; },
      [](auto, auto y, auto r) { return -r / y; });
}

Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b) {
  same_shape(a, b, "minimum");
  return binary(
      tape, a, b, "minimum", [](auto x, auto y) { return x <= y ? x : y; },
      [](auto x, auto y, auto) { return decltype(x)(x <= y ? 1 : 0); },
      [](auto x, auto y, auto) { return decltype(x)(x <= y ? 0 : 1); });
}

Tensor maximum(Tape& tape, const Tensor& a, const Tensor& b) {
  same_shape(a, b, "maximum");
  return binary(
      tape, a, b, "maximum", [](auto x, auto y) { return x >= y ? x : y; },
      [](auto x, auto y, auto) { return decltype(x)(x >= y ? 1 : 0); },
      [](auto x, auto y, auto) { return decltype(x)(x >= y ? 0 : 1); });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return unary(
      tape, x, [factor](auto v) { return static_cast<decltype(v)>(v * factor); },
      [factor](auto v, auto) { return static_cast<decltype(v)>(factor); });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double value) {
  return unary(
      tape, x, [value](auto v) { return static_cast<decltype(v)>(v + value); },
      [](auto v, auto) { return decltype(v)(1); });
}

Tensor neg(Tape& tape, const Tensor& x) { return scale(tape, x, -1.0); }

Tensor exp(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](auto v) { return std::exp(v); }, [](auto, auto y) { return y; });
}

Tensor log(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](auto v) { return std::log(v); },
      [](auto v, auto) { return decltype(v)(1) / v; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x,
      [](auto v) {
        using T = decltype(v);
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out = make_output(x.shape(), x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    // The normal CDF is kept for the backward pass.
    auto cdf = std::make_shared<std::vector<T>>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      (*cdf)[i] = T(0.5) * (T(1) + fastmath::erf(xs[i] * T(std::numbers::sqrt2 / 2)));
      ys[i] = xs[i] * (*cdf)[i];
    }
    tape.record(out, [X = x.impl(), O = out.impl(), cdf]() {
      const auto& xv = X->values<T>();
      const auto& g = O->grads<T>();
      T* gx = X->ensure_grad<T>();
      const T norm = T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const T v = xv[i];
        gx[i] += g[i] * ((*cdf)[i] + v * fastmath::exp(T(-0.5) * v * v) * norm);
      }
    });
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) { return clamp_min(tape, x, 0.0); }

Tensor abs(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](auto v) { return std::abs(v); },
      [](auto v, auto) {
        using T = decltype(v);
        return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0));
      });
}

Tensor clamp_min(Tape& tape, const Tensor& x, double lo) {
  return unary(
      tape, x,
      [lo](auto v) {
        using T = decltype(v);
        return v > T(lo) ? v : T(lo);
      },
      [lo](auto v, auto) {
        using T = decltype(v);
        return v > T(lo) ? T(1) : T(0);
      });
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  same_dtype(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = b.rank() == 2;
  if (k != kb || (!shared_b && a_batch != b_batch)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Shape out_shape = a_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = make_output(out_shape, a.dtype(), a.requires_grad() || b.requires_grad());
  const std::size_t batch = shape_numel(a_batch);
  dispatch(a.dtype(), [&]<class T>() {
    const T* av = a.data<T>().data();
    const T* bv = b.data<T>().data();
    T* cv = out.data<T>().data();
    if (shared_b) {
      kernels::gemm<T>(false, false, batch * m, n, k, T(1), av, k, bv, n, T(0), cv, n);
    } else {
      for (std::size_t i = 0; i < batch; ++i) {
        kernels::gemm<T>(false, false, m, n, k, T(1), av + i * m * k, k, bv + i * k * n, n, T(0),
                         cv + i * m * n, n);
      }
    }
    tape.record(out, [A = a.impl(), B = b.impl(), O = out.impl(), batch, m, n, k, shared_b]() {
      const T* g = O->grads<T>().data();
      const T* av = A->values<T>().data();
      const T* bv = B->values<T>().data();
      if (A->requires_grad) {
        T* ga = A->ensure_grad<T>();
        if (shared_b) {
          kernels::gemm<T>(false, true, batch * m, k, n, T(1), g, n, bv, n, T(1), ga, k);
        } else {
          for (std::size_t i = 0; i < batch; ++i) {
            kernels::gemm<T>(false, true, m, k, n, T(1), g + i * m * n, n, bv + i * k * n, n, T(1),
                             ga + i * m * k, k);
          }
        }
      }
      if (B->requires_grad) {
        T* gb = B->ensure_grad<T>();
        if (shared_b) {
          kernels::gemm<T>(true, false, k, n, batch * m, T(1), av, k, g, n, T(1), gb, n);
        } else {
          for (std::size_t i = 0; i < batch; ++i) {
            kernels::gemm<T>(true, false, k, n, m, T(1), av + i * m * k, k, g + i * m * n, n, T(1),
                             gb + i * k * n, n);
          }
        }
      }
    });
  });
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  same_dtype(x, weight, "linear");
  same_dtype(x, bias, "linear");
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(x.rank() - 1) != weight.dim(0) ||
      bias.numel() != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t in = weight.dim(0);
  const std::size_t outd = weight.dim(1);
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  Tensor out = make_output(out_shape, x.dtype(),
                           x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    T* y = out.data<T>().data();
    const T* bv = bias.data<T>().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv, bv + outd, y + r * outd);
    kernels::gemm<T>(false, false, rows, outd, in, T(1), x.data<T>().data(), in,
                     weight.data<T>().data(), outd, T(1), y, outd);
    tape.record(out, [X = x.impl(), W = weight.impl(), Bi = bias.impl(), O = out.impl(), rows, in,
                      outd]() {
      const T* g = O->grads<T>().data();
      if (X->requires_grad) {
        kernels::gemm<T>(false, true, rows, in, outd, T(1), g, outd, W->values<T>().data(), outd,
                         T(1), X->ensure_grad<T>(), in);
      }
      if (W->requires_grad) {
        kernels::gemm<T>(true, false, in, outd, rows, T(1), X->values<T>().data(), in, g, outd,
                         T(1), W->ensure_grad<T>(), outd);
      }
      if (Bi->requires_grad) {
        T* gb = Bi->ensure_grad<T>();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
        }
      }
    });
  });
  return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_string(x.shape()));
  const std::size_t r = x.dim(x.rank() - 2);
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t batch = x.numel() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Tensor out = make_output(out_shape, x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* yv = out.data<T>().data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) yv[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
      }
    }
    tape.record(out, [X = x.impl(), O = out.impl(), batch, r, c]() {
      const T* g = O->grads<T>().data();
      T* gx = X->ensure_grad<T>();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += g[b * r * c + j * r + i];
        }
      }
    });
  });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tensor out = make_output(shape, x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    std::copy(x.data<T>().begin(), x.data<T>().end(), out.data<T>().begin());
    tape.record(out, [X = x.impl(), O = out.impl()]() {
      const auto& g = O->grads<T>();
      T* gx = X->ensure_grad<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor out = make_output(x.shape(), x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* yv = out.data<T>().data();
    if (s.inner == 1) {
      kernels::softmax_rows<T>(xv, yv, s.outer, s.extent);
    } else {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          T max_v = -std::numeric_limits<T>::infinity();
          for (std::size_t e = 0; e < s.extent; ++e) max_v = std::max(max_v, xv[base + e * s.inner]);
          T total = 0;
          for (std::size_t e = 0; e < s.extent; ++e) {
            yv[base + e * s.inner] = std::exp(xv[base + e * s.inner] - max_v);
            total += yv[base + e * s.inner];
          }
          for (std::size_t e = 0; e < s.extent; ++e) yv[base + e * s.inner] /= total;
        }
      }
    }
    tape.record(out, [X = x.impl(), O = out.impl(), s]() {
      const T* g = O->grads<T>().data();
      const T* y = O->values<T>().data();
      T* gx = X->ensure_grad<T>();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          T dot = 0;
          for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t i = base + e * s.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  });
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  same_dtype(x, gamma, "layer_norm");
  same_dtype(x, beta, "layer_norm");
  if (x.rank() < 1 || gamma.numel() != x.dim(x.rank() - 1) || beta.numel() != gamma.numel()) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + ", gamma " +
                         shape_string(gamma.shape()) + ", beta " + shape_string(beta.shape()));
  }
  const std::size_t cols = gamma.numel();
  const std::size_t rows = x.numel() / cols;
  Tensor out = make_output(x.shape(), x.dtype(),
                           x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    auto stats = std::make_shared<std::vector<T>>(2 * rows);
    kernels::layer_norm_forward<T>(x.data<T>().data(), gamma.data<T>().data(),
                                   beta.data<T>().data(), out.data<T>().data(), stats->data(),
                                   stats->data() + rows, rows, cols, static_cast<T>(eps));
    tape.record(out, [X = x.impl(), G = gamma.impl(), B = beta.impl(), O = out.impl(), stats,
                      rows, cols]() {
      // Scratch buffers keep the kernel's accumulate contract uniform.
      std::vector<T> dx(X->requires_grad ? 0 : rows * cols);
      std::vector<T> dg(G->requires_grad ? 0 : cols);
      std::vector<T> db(B->requires_grad ? 0 : cols);
      T* dxp = X->requires_grad ? X->ensure_grad<T>() : dx.data();
      T* dgp = G->requires_grad ? G->ensure_grad<T>() : dg.data();
      T* dbp = B->requires_grad ? B->ensure_grad<T>() : db.data();
      kernels::layer_norm_backward<T>(O->grads<T>().data(), X->values<T>().data(),
                                      G->values<T>().data(), stats->data(), stats->data() + rows,
                                      dxp, dgp, dbp, rows, cols);
    });
  });
  return out;
}

Tensor l2_normalize(Tape& tape, const Tensor& x, double eps) {
  if (x.rank() < 1) throw DimensionError("l2_normalize: scalar input");
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = cols == 0 ? 0 : x.numel() / cols;
  Tensor out = make_output(x.shape(), x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    auto norms = std::make_shared<std::vector<T>>(rows);
    const T* xv = x.data<T>().data();
    T* yv = out.data<T>().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T ss = 0;
      for (std::size_t j = 0; j < cols; ++j) ss += xv[r * cols + j] * xv[r * cols + j];
      const T n = std::sqrt(ss + static_cast<T>(eps));
      (*norms)[r] = n;
      for (std::size_t j = 0; j < cols; ++j) yv[r * cols + j] = xv[r * cols + j] / n;
    }
    tape.record(out, [X = x.impl(), O = out.impl(), norms, rows, cols]() {
      const T* g = O->grads<T>().data();
      const T* y = O->values<T>().data();
      T* gx = X->ensure_grad<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[r * cols + j] * g[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          gx[r * cols + j] += (g[r * cols + j] - y[r * cols + j] * dot) / (*norms)[r];
        }
      }
    });
  });
  return out;
}

Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.dim(0)) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(table.dim(0)));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(tape, table, rows);
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) throw DimensionError("gather_rows: scalar input");
  const std::size_t n_rows = x.dim(0);
  const std::size_t width = n_rows == 0 ? 0 : x.numel() / n_rows;
  for (auto r : rows) {
    if (r >= n_rows) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " outside " +
                           shape_string(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  Tensor out = make_output(out_shape, x.dtype(), x.requires_grad());
  auto index = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* yv = out.data<T>().data();
    for (std::size_t i = 0; i < index->size(); ++i) {
      std::copy(xv + (*index)[i] * width, xv + ((*index)[i] + 1) * width, yv + i * width);
    }
    tape.record(out, [X = x.impl(), O = out.impl(), index, width]() {
      const T* g = O->grads<T>().data();
      T* gx = X->ensure_grad<T>();
      for (std::size_t i = 0; i < index->size(); ++i) {
        T* dst = gx + (*index)[i] * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += g[i * width + j];
      }
    });
  });
  return out;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Tensor& first = parts.front();
  Shape out_shape = first.shape();
  split_axis(out_shape, axis, "concat");
  bool rg = false;
  std::size_t extent = 0;
  for (const auto& p : parts) {
    same_dtype(first, p, "concat");
    Shape a = p.shape();
    Shape b = first.shape();
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[axis] = 0;
    b[axis] = 0;
    if (a != b) {
      throw DimensionError("concat: " + shape_string(p.shape()) + " vs " +
                           shape_string(first.shape()) + " along axis " + std::to_string(axis));
    }
    extent += p.dim(axis);
    rg = rg || p.requires_grad();
  }
  out_shape[axis] = extent;
  const AxisSplit s = split_axis(out_shape, axis, "concat");
  Tensor out = make_output(out_shape, first.dtype(), rg);
  std::vector<ImplPtr> impls;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    extents.push_back(p.dim(axis));
  }
  dispatch(first.dtype(), [&]<class T>() {
    T* yv = out.data<T>().data();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < impls.size(); ++p) {
      const T* xv = impls[p]->values<T>().data();
      const std::size_t chunk = extents[p] * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy(xv + o * chunk, xv + (o + 1) * chunk, yv + o * s.extent * s.inner + offset);
      }
      offset += chunk;
    }
    tape.record(out, [impls, extents, O = out.impl(), s]() {
      const T* g = O->grads<T>().data();
      std::size_t offset = 0;
      for (std::size_t p = 0; p < impls.size(); ++p) {
        const std::size_t chunk = extents[p] * s.inner;
        if (impls[p]->requires_grad) {
          T* gx = impls[p]->ensure_grad<T>();
          for (std::size_t o = 0; o < s.outer; ++o) {
            const T* src = g + o * s.extent * s.inner + offset;
            for (std::size_t j = 0; j < chunk; ++j) gx[o * chunk + j] += src[j];
          }
        }
        offset += chunk;
      }
    });
  });
  return out;
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (start + length > s.extent) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of size " +
                         std::to_string(s.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out = make_output(out_shape, x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* yv = out.data<T>().data();
    const std::size_t chunk = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = xv + o * s.extent * s.inner + start * s.inner;
      std::copy(src, src + chunk, yv + o * chunk);
    }
    tape.record(out, [X = x.impl(), O = out.impl(), s, start, chunk]() {
      const T* g = O->grads<T>().data();
      T* gx = X->ensure_grad<T>();
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = gx + o * s.extent * s.inner + start * s.inner;
        for (std::size_t j = 0; j < chunk; ++j) dst[j] += g[o * chunk + j];
      }
    });
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = make_output({}, x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    T total = 0;
    for (T v : x.data<T>()) total += v;
    out.data<T>()[0] = total;
    tape.record(out, [X = x.impl(), O = out.impl()]() {
      const T g = O->grads<T>()[0];
      T* gx = X->ensure_grad<T>();
      for (std::size_t i = 0; i < X->values<T>().size(); ++i) gx[i] += g;
    });
  });
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out = make_output(out_shape, x.dtype(), x.requires_grad());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* yv = out.data<T>().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          yv[o * s.inner + in] += xv[(o * s.extent + e) * s.inner + in];
        }
      }
    }
    tape.record(out, [X = x.impl(), O = out.impl(), s]() {
      const T* g = O->grads<T>().data();
      T* gx = X->ensure_grad<T>();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            gx[(o * s.extent + e) * s.inner + in] += g[o * s.inner + in];
          }
        }
      }
    });
  });
  return out;
}

Tensor mean_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean_axis");
  if (s.extent == 0) throw ContractError("mean_axis over an empty axis");
  return scale(tape, sum_axis(tape, x, axis), 1.0 / static_cast<double>(s.extent));
}

namespace {

template <class T>
void log_softmax_row(const T* z, T* out, std::size_t n) {
  const T max_v = *std::max_element(z, z + n);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(z[j] - max_v);
  const T lse = max_v + std::log(total);
  for (std::size_t j = 0; j < n; ++j) out[j] = z[j] - lse;
}

}  // namespace

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  if (rows == 0) throw ContractError("cross_entropy: no rows");
  for (auto t : targets) {
    if (t >= cols) throw DimensionError("cross_entropy: target class out of range");
  }
  Tensor out = make_output({}, logits.dtype(), logits.requires_grad());
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  dispatch(logits.dtype(), [&]<class T>() {
    auto logp = std::make_shared<std::vector<T>>(rows * cols);
    const T* z = logits.data<T>().data();
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      log_softmax_row(z + r * cols, logp->data() + r * cols, cols);
      total -= (*logp)[r * cols + (*tgt)[r]];
    }
    out.data<T>()[0] = total / static_cast<T>(rows);
    tape.record(out, [L = logits.impl(), O = out.impl(), logp, tgt, rows, cols]() {
      const T g = O->grads<T>()[0] / static_cast<T>(rows);
      T* gz = L->ensure_grad<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const T p = std::exp((*logp)[r * cols + c]);
          gz[r * cols + c] += g * (p - (c == (*tgt)[r] ? T(1) : T(0)));
        }
      }
    });
  });
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const Tensor& target) {
  same_dtype(logits, target, "cross_entropy");
  if (logits.rank() != 2 || logits.shape() != target.shape()) {
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) +
                         " vs target " + shape_string(target.shape()));
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  if (rows == 0) throw ContractError("cross_entropy: no rows");
  Tensor out = make_output({}, logits.dtype(), logits.requires_grad());
  dispatch(logits.dtype(), [&]<class T>() {
    auto logp = std::make_shared<std::vector<T>>(rows * cols);
    const T* z = logits.data<T>().data();
    const T* y = target.data<T>().data();
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      log_softmax_row(z + r * cols, logp->data() + r * cols, cols);
      for (std::size_t c = 0; c < cols; ++c) {
        if (y[r * cols + c] != T(0)) total -= y[r * cols + c] * (*logp)[r * cols + c];
      }
    }
    out.data<T>()[0] = total / static_cast<T>(rows);
    tape.record(out, [L = logits.impl(), Y = target.impl(), O = out.impl(), logp, rows, cols]() {
      const T g = O->grads<T>()[0] / static_cast<T>(rows);
      const T* y = Y->values<T>().data();
      T* gz = L->ensure_grad<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        T mass = 0;
        for (std::size_t c = 0; c < cols; ++c) mass += y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const T p = std::exp((*logp)[r * cols + c]);
          gz[r * cols + c] += g * (p * mass - y[r * cols + c]);
        }
      }
    });
  });
  return out;
}

Tensor attention_probs(Tape& tape, const Tensor& q, const Tensor& k,
                       std::shared_ptr<const kernels::AttentionLayout> layout) {
  same_dtype(q, k, "attention_probs");
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1) ||
      q.dim(1) % layout->heads() != 0 || layout->query_rows() > q.dim(0) ||
      layout->key_rows() > k.dim(0)) {
    throw DimensionError("attention_probs: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", heads " + std::to_string(layout->heads()));
  }
  const std::size_t hidden = q.dim(1);
  Tensor out = make_output({layout->prob_size()}, q.dtype(), q.requires_grad() || k.requires_grad());
  dispatch(q.dtype(), [&]<class T>() {
    kernels::attention_probs_forward<T>(q.data<T>().data(), k.data<T>().data(), hidden, *layout,
                                        out.data<T>().data());
    tape.record(out, [Q = q.impl(), K = k.impl(), O = out.impl(), layout, hidden]() {
      std::vector<T> scratch_q(Q->requires_grad ? 0 : Q->values<T>().size());
      std::vector<T> scratch_k(K->requires_grad ? 0 : K->values<T>().size());
      T* dq = Q->requires_grad ? Q->ensure_grad<T>() : scratch_q.data();
      T* dk = K->requires_grad ? K->ensure_grad<T>() : scratch_k.data();
      kernels::attention_probs_backward<T>(O->grads<T>().data(), O->values<T>().data(),
                                           Q->values<T>().data(), K->values<T>().data(), hidden,
                                           *layout, dq, dk);
    });
  });
  return out;
}

Tensor attention_apply(Tape& tape, const Tensor& probs, const Tensor& v,
                       std::shared_ptr<const kernels::AttentionLayout> layout) {
  same_dtype(probs, v, "attention_apply");
  if (probs.numel() != layout->prob_size() || v.rank() != 2 ||
      v.dim(1) % layout->heads() != 0 || layout->key_rows() > v.dim(0)) {
    throw DimensionError("attention_apply: probs " + shape_string(probs.shape()) + ", v " +
                         shape_string(v.shape()));
  }
  const std::size_t hidden = v.dim(1);
  Tensor out = make_output({layout->query_rows(), hidden}, v.dtype(),
                           probs.requires_grad() || v.requires_grad());
  dispatch(v.dtype(), [&]<class T>() {
    kernels::attention_apply_forward<T>(probs.data<T>().data(), v.data<T>().data(), hidden,
                                        *layout, out.data<T>().data());
    tape.record(out, [P = probs.impl(), V = v.impl(), O = out.impl(), layout, hidden]() {
      std::vector<T> scratch_p(P->requires_grad ? 0 : P->values<T>().size());
      std::vector<T> scratch_v(V->requires_grad ? 0 : V->values<T>().size());
      T* dp = P->requires_grad ? P->ensure_grad<T>() : scratch_p.data();
      T* dv = V->requires_grad ? V->ensure_grad<T>() : scratch_v.data();
      kernels::attention_apply_backward<T>(O->grads<T>().data(), P->values<T>().data(),
                                           V->values<T>().data(), hidden, *layout, dp, dv);
    });
  });
  return out;
}

}  // namespace ops
}  // namespace xgrain
