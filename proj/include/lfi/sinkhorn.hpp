#pragma once

#include <Eigen/Dense>

namespace lfi {

struct SinkhornConfig {
  // Entropic regularization; non-positive selects the automatic choice of
  // 0.05 times the median pairwise squared distance between the two sets.
  double eps_ot = 0.0;
  int max_iterations = 10000;
  // Stop when the L1 violation of the row marginal falls below this. The
  // reported dual value is far more accurate than the marginal residual
  // (its error shrinks roughly with the residual squared), so 1e-7 keeps
  // the transport cost well below 1e-8 absolute error on unit-scale data.
  double tolerance = 1e-7;
};

struct SinkhornResult {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Entropic optimal-transport cost W_eps between uniform empirical measures
// on the rows of a and b (squared-Euclidean ground cost), solved by
// log-domain Sinkhorn updates on the dual potentials. eps must be positive.
SinkhornResult entropic_transport_cost(const Eigen::MatrixXd& a,
                                       const Eigen::MatrixXd& b, double eps,
                                       int max_iterations, double tolerance);

// Debiased divergence S_eps(a,b) = W_eps(a,b) - (W_eps(a,a) + W_eps(b,b))/2,
// zero for identical sets and symmetric. Non-convergence of any of the three
// solves clears the converged flag; the best value found is still returned.
SinkhornResult sinkhorn_divergence(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b,
                                   const SinkhornConfig& config = {});

// sinkhorn_divergence after dividing both sample sets by the reference set's
// per-dimension standard deviation, so values are scale-comparable across
// problems. The reference needs at least two rows.
SinkhornResult posterior_divergence(const Eigen::MatrixXd& samples,
                                    const Eigen::MatrixXd& reference,
                                    const SinkhornConfig& config = {});

}  // namespace lfi
