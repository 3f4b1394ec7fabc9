#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

namespace medalign {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

enum class Direction { V2T, T2V };

// Softmax along each row (max-subtracted).
template <typename Derived>
MatrixX<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Scalar m = z.row(i).maxCoeff();
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      out(i, j) = std::exp(z(i, j) - m);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> col_softmax(const Eigen::MatrixBase<Derived>& z) {
  return row_softmax(z.transpose()).transpose();
}

template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_along(const Eigen::MatrixBase<Derived>& z, Direction d) {
  return d == Direction::V2T ? row_softmax(z) : col_softmax(z);
}

}  // namespace medalign
