#include "lfi/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lfi/errors.hpp"
#include "lfi/math.hpp"

namespace lfi {

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a,
                                  const Eigen::MatrixXd& b) {
  const Eigen::VectorXd an = a.rowwise().squaredNorm();
  const Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd c = -2.0 * a * b.transpose();
  c.colwise() += an;
  c.rowwise() += bn.transpose();
  return c.cwiseMax(0.0);
}

void check_sets(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 0 || b.rows() == 0)
    throw InsufficientDataError("sinkhorn: empty sample set");
  if (a.cols() != b.cols())
    throw ShapeError("sinkhorn: sample sets differ in dimension");
}

double auto_epsilon(const Eigen::MatrixXd& cost) {
  std::vector<double> entries(cost.data(), cost.data() + cost.size());
  double eps = 0.05 * median(std::move(entries));
  if (eps <= 0.0) eps = 0.05 * cost.mean();
  if (eps <= 0.0) eps = 1e-12;
  return eps;
}

// Regularization schedule: halve from the cost scale down to the target,
// so the potentials warm-start each level from the previous one.
std::vector<double> annealing_levels(double max_cost, double eps) {
  std::vector<double> levels;
  for (double level = 0.5 * max_cost; level > eps; level *= 0.5)
    levels.push_back(level);
  levels.push_back(eps);
  return levels;
}

// out_i = -cur * (log_b + logsumexp_j((g_j - cost_ij) / cur)), the dual map
// whose fixed point in f makes the row marginal exact.
void row_map(const Eigen::MatrixXd& cost, const Eigen::VectorXd& g, double cur,
             double log_b, Eigen::MatrixXd& work, Eigen::VectorXd& out) {
  work = ((-cost).rowwise() + g.transpose()) / cur;
  const Eigen::VectorXd shift = work.rowwise().maxCoeff();
  out = -cur * ((work.colwise() - shift).array().exp().rowwise().sum().log() +
                shift.array() + log_b);
}

void col_map(const Eigen::MatrixXd& cost, const Eigen::VectorXd& f, double cur,
             double log_a, Eigen::MatrixXd& work, Eigen::VectorXd& out) {
  work = ((-cost).colwise() + f) / cur;
  const Eigen::RowVectorXd shift = work.colwise().maxCoeff();
  out = (-cur *
         ((work.rowwise() - shift).array().exp().colwise().sum().log() +
          shift.array() + log_a))
            .transpose();
}

SinkhornResult solve(const Eigen::MatrixXd& cost, double eps,
                     int max_iterations, double tolerance) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  const double a_mass = std::exp(log_a);

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd next(n);
  Eigen::MatrixXd work(n, m);

  const std::vector<double> levels = annealing_levels(cost.maxCoeff(), eps);

  SinkhornResult out;
  std::size_t stage = 0;
  for (int it = 1; it <= max_iterations; ++it) {
    out.iterations = it;
    const double cur = levels[stage];

    // After the previous g update the plan has exact column marginals, and
    // its row marginal is a_i * exp((f_i - next_i) / cur), so the f-update
    // residual is the L1 marginal violation for free.
    row_map(cost, g, cur, log_b, work, next);
    const double err =
        a_mass * (((f - next) / cur).array().exp() - 1.0).abs().sum();
    f.swap(next);
    col_map(cost, f, cur, log_a, work, g);

    if (!std::isfinite(err))
      throw NumericalFailureError("sinkhorn: marginal error is not finite");
    if (stage + 1 < levels.size()) {
      ++stage;
      continue;
    }
    if (err < tolerance) {
      out.converged = true;
      break;
    }
  }

  out.value = a_mass * f.sum() + std::exp(log_b) * g.sum();
  return out;
}

// Self-transport of a uniform measure: the optimal potentials coincide, and
// the averaged fixed-point step f <- (f + T(f)) / 2 converges fast where the
// alternating updates stall.
SinkhornResult solve_symmetric(const Eigen::MatrixXd& cost, double eps,
                               int max_iterations, double tolerance) {
  const Eigen::Index n = cost.rows();
  const double log_a = -std::log(static_cast<double>(n));
  const double a_mass = std::exp(log_a);

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mapped(n);
  Eigen::MatrixXd work(n, n);

  const std::vector<double> levels = annealing_levels(cost.maxCoeff(), eps);

  SinkhornResult out;
  std::size_t stage = 0;
  for (int it = 1; it <= max_iterations; ++it) {
    out.iterations = it;
    const double cur = levels[stage];

    row_map(cost, f, cur, log_a, work, mapped);
    const double err =
        a_mass * (((f - mapped) / cur).array().exp() - 1.0).abs().sum();
    f = 0.5 * (f + mapped);

    if (!std::isfinite(err))
      throw NumericalFailureError("sinkhorn: marginal error is not finite");
    if (stage + 1 < levels.size()) {
      ++stage;
      continue;
    }
    if (err < tolerance) {
      out.converged = true;
      break;
    }
  }

  out.value = 2.0 * a_mass * f.sum();
  return out;
}

bool same_rows(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && (a - b).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

SinkhornResult entropic_transport_cost(const Eigen::MatrixXd& a,
                                       const Eigen::MatrixXd& b, double eps,
                                       int max_iterations, double tolerance) {
  check_sets(a, b);
  if (!(eps > 0.0))
    throw DomainError("sinkhorn: regularization must be positive");
  if (max_iterations < 1)
    throw ConfigError("sinkhorn: max_iterations must be >= 1");
  if (!(tolerance > 0.0))
    throw ConfigError("sinkhorn: tolerance must be positive");
  if (same_rows(a, b))
    return solve_symmetric(squared_distances(a, a), eps, max_iterations,
                           tolerance);
  return solve(squared_distances(a, b), eps, max_iterations, tolerance);
}

SinkhornResult sinkhorn_divergence(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b,
                                   const SinkhornConfig& config) {
  check_sets(a, b);
  const Eigen::MatrixXd cost = squared_distances(a, b);
  const double eps =
      config.eps_ot > 0.0 ? config.eps_ot : auto_epsilon(cost);
  if (config.max_iterations < 1)
    throw ConfigError("sinkhorn: max_iterations must be >= 1");
  if (!(config.tolerance > 0.0))
    throw ConfigError("sinkhorn: tolerance must be positive");

  if (same_rows(a, b)) {
    // The cross term coincides with the self terms, so the debiased value
    // is exactly zero; run one symmetric solve for the convergence report.
    SinkhornResult out = solve_symmetric(cost, eps, config.max_iterations,
                                         config.tolerance);
    out.value = 0.0;
    return out;
  }

  const SinkhornResult ab =
      solve(cost, eps, config.max_iterations, config.tolerance);
  const SinkhornResult aa =
      solve_symmetric(squared_distances(a, a), eps, config.max_iterations,
                      config.tolerance);
  const SinkhornResult bb =
      solve_symmetric(squared_distances(b, b), eps, config.max_iterations,
                      config.tolerance);

  SinkhornResult out;
  out.value = ab.value - 0.5 * (aa.value + bb.value);
  out.converged = ab.converged && aa.converged && bb.converged;
  out.iterations =
      std::max(ab.iterations, std::max(aa.iterations, bb.iterations));
  return out;
}

SinkhornResult posterior_divergence(const Eigen::MatrixXd& samples,
                                    const Eigen::MatrixXd& reference,
                                    const SinkhornConfig& config) {
  check_sets(samples, reference);
  const Standardizer std_ref = Standardizer::fit(reference);
  return sinkhorn_divergence(std_ref.transform(samples),
                             std_ref.transform(reference), config);
}

}  // namespace lfi
