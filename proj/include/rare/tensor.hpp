#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rare {

using Shape = std::vector<int>;

inline int numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense n-dimensional array, row-major. `grad`, when non-empty, has the
/// same element count as `values`.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> values;
  bool requires_grad = false;
  std::vector<S> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<S> v) : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != static_cast<int>(values.size()))
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    for (int d : shape)
      if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    int n = numel(s);
    return Tensor(std::move(s), std::vector<S>(static_cast<size_t>(n), S(0)));
  }
  static Tensor full(Shape s, S v) {
    int n = numel(s);
    return Tensor(std::move(s), std::vector<S>(static_cast<size_t>(n), v));
  }
  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  int size() const { return static_cast<int>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  S& operator[](int i) { return values[static_cast<size_t>(i)]; }
  const S& operator[](int i) const { return values[static_cast<size_t>(i)]; }

  // 2-D accessors (rows x cols)
  S& at(int r, int c) { return values[static_cast<size_t>(r * shape[1] + c)]; }
  const S& at(int r, int c) const { return values[static_cast<size_t>(r * shape[1] + c)]; }

  bool all_finite() const {
    for (S v : values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) out[i] = static_cast<T>(values[i]);
    return Tensor<T>(shape, std::move(out));
  }
};

}  // namespace rare
