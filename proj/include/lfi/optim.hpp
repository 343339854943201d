#pragma once

#include <Eigen/Dense>
#include <functional>

#include "lfi/math.hpp"
#include "lfi/rng.hpp"

namespace lfi::opt {

// Objective callback: returns f(x); when grad != nullptr it must also fill
// the gradient at x.
using ObjectiveFn =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

// Plain function of x, differentiated numerically by the wrapper below.
using ValueFn = std::function<double(const Eigen::VectorXd&)>;

struct LbfgsOptions {
  int memory = 10;        // history pairs kept for the inverse-Hessian model
  int max_evals = 100;    // budget of objective evaluations
  double grad_tol = 1e-9; // on the projected gradient infinity norm
  double f_tol = 1e-14;   // relative improvement stop
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

// Box-constrained limited-memory quasi-Newton descent: L-BFGS two-loop
// directions with projection onto the box and an Armijo backtracking line
// search along the projected path. Always returns the best point seen.
LbfgsResult minimize_box_lbfgs(const ObjectiveFn& fg, Eigen::VectorXd x0,
                               const Bounds& box, const LbfgsOptions& opts);

// Central-difference gradient adapter for objectives without analytic
// gradients. Each gradient costs 2*dim extra evaluations; stencil points are
// clipped to the box so the objective is never probed outside it.
ObjectiveFn with_central_differences(ValueFn f, double h, const Bounds& box);

struct MultiStartOptions {
  int restarts = 10;
  LbfgsOptions local;
  int fallback_probes = 256;  // random probes if every restart fails
};

struct MultiStartResult {
  Eigen::VectorXd x;
  double f = 0.0;
  bool used_fallback = false;
};

// Runs `restarts` local searches from uniform random points in the box (the
// first start may be supplied by the caller) and keeps the best minimum. If
// every local search throws, falls back to the best of `fallback_probes`
// random probes.
MultiStartResult minimize_multistart(const ObjectiveFn& fg, const Bounds& box,
                                     const MultiStartOptions& opts,
                                     RngStream& rng,
                                     const Eigen::VectorXd* first_start = nullptr);

// Adam with element-wise moment estimates. Holds state for one parameter
// block; the caller applies the returned step.
class Adam {
 public:
  Adam() = default;
  explicit Adam(double step, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : step_(step), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Ascent step for the given gradient (callers maximise the bound).
  Eigen::MatrixXd update(const Eigen::MatrixXd& grad);
  void reset();
  // Extends the moment estimates with zero rows when the parameter block
  // grows at the tail; keeps the accumulated state of existing rows.
  void pad_rows(Eigen::Index rows);

 private:
  double step_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Eigen::MatrixXd m_;
  Eigen::MatrixXd v_;
};

}  // namespace lfi::opt
