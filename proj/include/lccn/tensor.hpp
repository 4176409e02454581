// Copyright (c) 2026 The LCCN Authors. All Rights Reserved.
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
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lccn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents that do not line up: bad shape, mismatched operands, wrong mask length.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (depth, preset names, hyper-parameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) { assign(dims.begin(), dims.end()); }
  explicit Shape(const std::vector<std::int64_t>& dims) { assign(dims.begin(), dims.end()); }

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  /// Product of extents; 0 for the rank-0 "empty" shape.
  std::size_t size() const {
    if (dims_.empty()) return 0;
    std::size_t n = 1;
    for (auto d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape&) const = default;

  std::string to_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  template <class It>
  void assign(It first, It last) {
    for (; first != last; ++first) {
      if (*first < 1) {
        throw ShapeError("shape extent must be >= 1, got " + std::to_string(*first));
      }
      dims_.push_back(static_cast<std::size_t>(*first));
    }
  }

  std::vector<std::size_t> dims_;
};

/// Dense row-major tensor. Rank-3 feature maps are laid out (x, y, c) and
/// rank-4 batches (n, x, y, c), channel fastest. Rank-4 weights are (t, i, j, c).
template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(shape_.size(), T(0)) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor buffer has " + std::to_string(data_.size()) +
                       " elements, shape " + shape_.to_string() + " needs " +
                       std::to_string(shape_.size()));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t x, std::size_t y, std::size_t c) { return data_[offset3(x, y, c)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t c) const { return data_[offset3(x, y, c)]; }
  T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) { return data_[offset4(a, b, c, d)]; }
  const T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[offset4(a, b, c, d)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <std::floating_point U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  std::size_t offset3(std::size_t x, std::size_t y, std::size_t c) const {
    if (shape_.rank() != 3 || x >= shape_[0] || y >= shape_[1] || c >= shape_[2]) {
      throw ShapeError("index (" + std::to_string(x) + "," + std::to_string(y) + "," +
                       std::to_string(c) + ") out of range for " + shape_.to_string());
    }
    return (x * shape_[1] + y) * shape_[2] + c;
  }
  std::size_t offset4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    if (shape_.rank() != 4 || a >= shape_[0] || b >= shape_[1] || c >= shape_[2] ||
        d >= shape_[3]) {
      throw ShapeError("rank-4 index out of range for " + shape_.to_string());
    }
    return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <std::floating_point T = float>
BasicTensor<T> zeros(const Shape& shape) {
  if (shape.rank() == 0) throw ShapeError("zeros: shape must have at least one extent");
  return BasicTensor<T>(shape);
}

template <std::floating_point T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("hadamard: " + a.shape().to_string() + " vs " + b.shape().to_string());
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <std::floating_point T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return out;
}

template <std::floating_point T>
std::size_t count_zeros(std::span<const T> values) {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](T v) { return v == T(0); }));
}

/// Fraction of exact zeros. Returns 0 for an empty tensor.
template <std::floating_point T>
double sparsity(const BasicTensor<T>& a) {
  if (a.empty()) return 0.0;
  return static_cast<double>(count_zeros(a.data())) / static_cast<double>(a.size());
}

template <std::floating_point T>
bool all_zero(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return v == T(0); });
}

template <std::floating_point T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

/// Batch-agnostic view of a feature map: rank-3 (x,y,c) is a batch of one.
struct FeatureDims {
  std::size_t n = 1, x = 1, y = 1, c = 1;

  std::size_t positions() const { return n * x * y; }
  std::size_t size() const { return n * x * y * c; }

  static FeatureDims of(const Shape& s) {
    if (s.rank() == 3) return {1, s[0], s[1], s[2]};
    if (s.rank() == 4) return {s[0], s[1], s[2], s[3]};
    throw ShapeError("feature map must be rank 3 or 4, got " + s.to_string());
  }

  /// Shape with the same rank as `like` but extents (x, y, c).
  static Shape shape_like(const Shape& like, std::size_t n, std::size_t x, std::size_t y,
                          std::size_t c) {
    auto i = [](std::size_t v) { return static_cast<std::int64_t>(v); };
    if (like.rank() == 3 && n == 1) return Shape{i(x), i(y), i(c)};
    return Shape{i(n), i(x), i(y), i(c)};
  }
};

}  // namespace lccn
