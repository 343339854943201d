#include "lfi/kernels.hpp"

#include <cmath>

#include "lfi/errors.hpp"

namespace lfi {

namespace {

void check_hypers(const Eigen::MatrixXd& X, const Eigen::MatrixXd& X2,
                  const Eigen::VectorXd& lengthscales, double variance) {
  if (variance <= 0.0)
    throw InvalidHyperparameterError("kernel variance must be positive");
  if ((lengthscales.array() <= 0.0).any())
    throw InvalidHyperparameterError("kernel lengthscales must be positive");
  if (X.cols() != X2.cols() || X.cols() != lengthscales.size())
    throw ShapeError("kernel input dimension mismatch");
  if (!X.allFinite() || !X2.allFinite())
    throw DomainError("kernel inputs must be finite");
}

}  // namespace

Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& X2,
                                  const Eigen::VectorXd& lengthscales,
                                  double variance) {
  check_hypers(X, X2, lengthscales, variance);
  const Eigen::MatrixXd Xs = X.array().rowwise() /
                             lengthscales.transpose().array();
  const Eigen::MatrixXd X2s = X2.array().rowwise() /
                              lengthscales.transpose().array();
  const Eigen::VectorXd xn = Xs.rowwise().squaredNorm();
  const Eigen::VectorXd x2n = X2s.rowwise().squaredNorm();
  Eigen::MatrixXd sq = (-2.0 * Xs * X2s.transpose());
  sq.colwise() += xn;
  sq.rowwise() += x2n.transpose();
  sq = sq.cwiseMax(0.0);
  return variance * (-0.5 * sq.array()).exp();
}

Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& lengthscales,
                                  double variance) {
  check_hypers(X, X, lengthscales, variance);
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd Xs = X.array().rowwise() /
                             lengthscales.transpose().array();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = variance;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d2 = (Xs.row(i) - Xs.row(j)).squaredNorm();
      const double v = variance * std::exp(-0.5 * d2);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& gram,
                                                 double jitter,
                                                 double max_jitter) {
  if (gram.rows() != gram.cols())
    throw ShapeError("cholesky of non-square matrix");
  Eigen::MatrixXd work = gram;
  double eps = jitter;
  while (true) {
    work.diagonal() = gram.diagonal().array() + eps;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success) return llt;
    if (eps >= max_jitter)
      throw NumericalFailureError(
          "Gram matrix not positive definite after jitter escalation");
    eps *= 10.0;
  }
}

}  // namespace lfi
