// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the error types shared across the library.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gramsynth {

using Shape = std::vector<long>;

// Thrown when operand shapes do not satisfy an operator's rules.
class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation produces or receives non-finite values.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on malformed files or configuration input.
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

/// Dense multidimensional array in row-major order.
template <typename Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;

  explicit Tensor(Shape s, Real fill = Real(0))
      : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {
    check_shape();
  }

  Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (static_cast<long>(data.size()) != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }

  long size() const { return static_cast<long>(data.size()); }
  long rank() const { return static_cast<long>(shape.size()); }
  long dim(int i) const { return shape[static_cast<size_t>(i)]; }

  Real& operator[](long i) { return data[static_cast<size_t>(i)]; }
  const Real& operator[](long i) const { return data[static_cast<size_t>(i)]; }

  // Row-major index helpers for the common ranks.
  Real& at2(long r, long c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
  const Real& at2(long r, long c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }
  Real& at3(long a, long b, long c) {
    return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
  }
  const Real& at3(long a, long b, long c) const {
    return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }

private:
  void check_shape() const {
    for (long d : shape) {
      if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }
  }
};

}  // namespace gramsynth
