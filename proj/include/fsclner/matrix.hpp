#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace fsclner {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// log(sum(exp(x))) computed around the maximum.
template <typename Row>
double log_sum_exp(const Eigen::MatrixBase<Row>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Row>
RowVector log_softmax(const Eigen::MatrixBase<Row>& x) {
  const double lse = log_sum_exp(x);
  return (x.array() - lse).matrix();
}

template <typename Row>
RowVector softmax(const Eigen::MatrixBase<Row>& x) {
  return log_softmax(x).array().exp().matrix();
}

}  // namespace fsclner
