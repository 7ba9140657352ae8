#pragma once

#include <Eigen/Dense>

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "betamixer/error.hpp"

namespace bmx::nn {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Row-major n-d array. The payload is held as a matrix whose rows are the
/// leading dimension and whose columns flatten the remaining ones; rank-1
/// tensors are a single row.
template <typename Scalar>
struct Tensor {
  Shape shape;
  Matrix<Scalar> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    validate_shape();
    data = Matrix<Scalar>::Zero(leading(shape), shape_size(shape) / leading(shape));
  }
  Tensor(Shape s, Matrix<Scalar> m) : shape(std::move(s)), data(std::move(m)) {
    validate_shape();
    if (data.rows() != leading(shape) || data.size() != shape_size(shape))
      throw ShapeError("tensor payload " + std::to_string(data.rows()) + "x" + std::to_string(data.cols()) +
                       " does not match shape " + shape_string(shape));
  }
  /// Wraps a matrix as a rank-2 tensor.
  static Tensor from_matrix(Matrix<Scalar> m) {
    Shape s{m.rows(), m.cols()};
    return Tensor(std::move(s), std::move(m));
  }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Scalar* raw() { return data.data(); }
  const Scalar* raw() const { return data.data(); }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size())
      throw ShapeError("cannot reshape " + shape_string(shape) + " to " + shape_string(s));
    Matrix<Scalar> m = Eigen::Map<const Matrix<Scalar>>(raw(), leading(s), shape_size(s) / leading(s));
    return Tensor(std::move(s), std::move(m));
  }

  static Index leading(const Shape& s) { return s.size() >= 2 ? s.front() : 1; }

 private:
  void validate_shape() const {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (Index d : shape)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
};

/// A named trainable array and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;

  Parameter(std::string n, Tensor<Scalar> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { grad.data.setZero(); }
};

}  // namespace bmx::nn
