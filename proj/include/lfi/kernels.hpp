#pragma once

#include <Eigen/Dense>

namespace lfi {

// Jitter added to Gram matrices before factorisation.
inline constexpr double kDefaultJitter = 1e-8;

// Squared-exponential cross-covariance:
//   K[i][j] = variance * exp(-0.5 * sum_d (X(i,d) - X2(j,d))^2 / ell_d^2)
// Rows of X / X2 are points. Throws InvalidHyperparameterError on
// non-positive lengthscales or variance.
Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& X2,
                                  const Eigen::VectorXd& lengthscales,
                                  double variance);

// Gram form: exactly symmetric by construction (upper triangle mirrored).
Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& lengthscales,
                                  double variance);

// Cholesky with jitter escalation: tries `jitter`, then 10x steps up to
// `max_jitter`. Throws NumericalFailureError if every attempt fails.
Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(const Eigen::MatrixXd& gram,
                                                 double jitter = kDefaultJitter,
                                                 double max_jitter = 1e-4);

}  // namespace lfi
