#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

namespace lfi {

// Closed per-dimension box.
struct Bounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Bounds() = default;
  Bounds(Eigen::VectorXd lo, Eigen::VectorXd hi);

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  Eigen::VectorXd clip(const Eigen::VectorXd& x) const;
  Eigen::VectorXd range() const { return upper - lower; }
};

// A point in simulator parameter space together with its box. Construction
// validates finiteness and membership.
struct ParameterVector {
  Eigen::VectorXd values;
  Bounds bounds;

  ParameterVector() = default;
  ParameterVector(Eigen::VectorXd v, Bounds b);

  Eigen::Index dim() const { return values.size(); }
};

// Per-column affine transform to zero mean, unit standard deviation
// (ddof = 0). Scales are floored at kScaleFloor so near-constant columns do
// not blow up.
class Standardizer {
 public:
  static constexpr double kScaleFloor = 1e-8;

  Standardizer() = default;

  // data: rows are observations. Requires >= 2 rows.
  static Standardizer fit(const Eigen::MatrixXd& data);

  // Reconstructs a standardizer from stored moments (scales must be > 0).
  static Standardizer from_moments(Eigen::VectorXd mean, Eigen::VectorXd scale);

  Eigen::MatrixXd transform(const Eigen::MatrixXd& data) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& data) const;
  Eigen::VectorXd transform_point(const Eigen::VectorXd& x) const;
  Eigen::VectorXd inverse_point(const Eigen::VectorXd& x) const;
  double transform_scalar(double x) const;
  double inverse_scalar(double x) const;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& scale() const { return scale_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

// Lower empirical quantile: the ceil(q*N)-th order statistic, q in (0, 1].
double empirical_quantile(std::span<const double> samples, double q);

// log( (1/K) sum_k exp(v_k) ), max-shifted for stability.
double log_mean_exp(std::span<const double> values);

// Standard normal density and distribution function (erf-based; the cdf is
// accurate to well below 1e-12 absolute error over the whole real line).
double norm_pdf(double x);
double norm_cdf(double x);
double gauss_pdf(double x, double mean, double variance);

// Sample mean and unbiased (ddof = 1) variance; variance is 0 for a single
// element.
double sample_mean(std::span<const double> values);
double sample_variance_unbiased(std::span<const double> values);

double median(std::vector<double> values);

// Shortest decimal string that parses back to exactly the same value
// (round-trip safe, locale independent). Used for CSV output.
std::string format_double(double value);

}  // namespace lfi
