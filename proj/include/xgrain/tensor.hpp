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

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "xgrain/errors.hpp"

namespace xgrain {

enum class DType : std::uint8_t { f32, f64 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Calls `fn.template operator()<T>()` with T matching the runtime dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f64;
  std::variant<std::vector<float>, std::vector<double>> data;
  std::variant<std::vector<float>, std::vector<double>> grad;
  bool requires_grad = false;
  bool has_grad = false;

  template <class T>
  std::vector<T>& values() {
    return std::get<std::vector<T>>(data);
  }
  template <class T>
  std::vector<T>& grads() {
    return std::get<std::vector<T>>(grad);
  }
  /// Allocates a zero gradient on first use.
  template <class T>
  T* ensure_grad() {
    if (!has_grad) {
      grad = std::vector<T>(values<T>().size(), T(0));
      has_grad = true;
    }
    return grads<T>().data();
  }
};

/// Dense row-major tensor with shared storage. Copies of a Tensor alias the
/// same buffer; use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, DType dtype = DType::f64);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f64);
  static Tensor from_values(const std::vector<double>& values, const Shape& shape,
                            DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const { return impl_->dtype; }

  template <class T>
  std::span<T> data() {
    check_type<T>();
    return impl_->values<T>();
  }
  template <class T>
  std::span<const T> data() const {
    check_type<T>();
    return impl_->values<T>();
  }

  /// Value at a flat index, converted to double.
  double at(std::size_t index) const;
  /// Sets a value at a flat index (no tape involvement).
  void set(std::size_t index, double value);
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl_->has_grad; }
  std::vector<double> grad_vector() const;
  template <class T>
  std::span<T> grad() {
    check_type<T>();
    return {impl_->ensure_grad<T>(), numel()};
  }
  void zero_grad();

  Tensor clone() const;
  /// Same values, detached from any tape, no gradient.
  Tensor detach() const { return clone(); }
  Tensor to(DType dtype) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  template <class T>
  void check_type() const {
    if (impl_->dtype != dtype_of<T>()) {
      throw ContractError("tensor dtype is " + to_string(impl_->dtype));
    }
  }

  std::shared_ptr<TensorImpl> impl_;
};

/// Flat little-endian serialization: rank (u64), dims (u64 each), raw values.
/// The value width comes from `dtype`; it is not stored in the stream.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in, DType dtype);

}  // namespace xgrain
