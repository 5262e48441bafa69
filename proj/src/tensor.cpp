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

#include "xgrain/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace xgrain {
namespace {

// Activation buffers are large and short-lived. Keeping them on the heap instead of
// fresh mmap regions avoids a page fault per touched page on every step.
[[maybe_unused]] const bool allocator_tuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  return true;
}();

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& name) {
  if (name == "f32" || name == "float32") return DType::f32;
  if (name == "f64" || name == "float64") return DType::f64;
  throw FormatError("unknown dtype '" + name + "'");
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return full(shape, 0.0, dtype); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  const std::size_t n = shape_numel(shape);
  dispatch(dtype, [&]<class T>() {
    impl->data = std::vector<T>(n, static_cast<T>(value));
    impl->grad = std::vector<T>();
  });
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(const std::vector<double>& values, const Shape& shape, DType dtype) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_string(shape));
  }
  Tensor t = zeros(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    std::transform(values.begin(), values.end(), t.data<T>().begin(),
                   [](double v) { return static_cast<T>(v); });
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return shape_numel(impl_->shape); }

double Tensor::at(std::size_t index) const {
  return dispatch(dtype(), [&]<class T>() { return static_cast<double>(impl_->values<T>().at(index)); });
}

void Tensor::set(std::size_t index, double value) {
  dispatch(dtype(), [&]<class T>() { impl_->values<T>().at(index) = static_cast<T>(value); });
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<class T>() {
    const auto& v = impl_->values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::vector<double> Tensor::grad_vector() const {
  if (!impl_->has_grad) return std::vector<double>(numel(), 0.0);
  return dispatch(dtype(), [&]<class T>() {
    const auto& g = impl_->grads<T>();
    return std::vector<double>(g.begin(), g.end());
  });
}

void Tensor::zero_grad() {
  if (!impl_->has_grad) return;
  dispatch(dtype(), [&]<class T>() {
    auto& g = impl_->grads<T>();
    std::fill(g.begin(), g.end(), T(0));
  });
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  dispatch(dtype(), [&]<class T>() { impl->grad = std::vector<T>(); });
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  return from_values(to_vector(), shape(), target);
}

namespace {

template <class U>
void put_le(std::ostream& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError("tensor stream truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  put_le<std::uint64_t>(out, tensor.rank());
  for (auto d : tensor.shape()) put_le<std::uint64_t>(out, d);
  dispatch(tensor.dtype(), [&]<class T>() {
    for (T v : tensor.data<T>()) put_le<T>(out, v);
  });
}

Tensor read_tensor(std::istream& in, DType dtype) {
  const auto rank = get_le<std::uint64_t>(in);
  if (rank > 8) throw FormatError("tensor stream: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint64_t>(in);
  Tensor t = Tensor::zeros(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    for (T& v : t.data<T>()) v = get_le<T>(in);
  });
  return t;
}

}  // namespace xgrain
