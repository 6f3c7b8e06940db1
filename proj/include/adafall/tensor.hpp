#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "adafall/error.hpp"

namespace adafall {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major n-dimensional array.
template <class T>
struct BasicTensor {
  Shape shape;
  std::vector<T> values;

  BasicTensor() = default;
  explicit BasicTensor(Shape s, T fill = T{0}) : shape(std::move(s)), values(shape_size(shape), fill) {}
  BasicTensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_size(shape)) {
      throw Error(ErrorCode::ShapeMismatch, shape_string(shape) + " needs " + std::to_string(shape_size(shape)) +
                                                " values, got " + std::to_string(values.size()));
    }
  }

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] std::size_t rank() const { return shape.size(); }
  [[nodiscard]] bool is_scalar() const { return values.size() == 1; }

  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }

  template <class U>
  [[nodiscard]] BasicTensor<U> cast() const {
    BasicTensor<U> out(shape);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
    return out;
  }

  bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<float>;

}  // namespace adafall
