#include "lfi/math.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "lfi/errors.hpp"

namespace lfi {

Bounds::Bounds(Eigen::VectorXd lo, Eigen::VectorXd hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size())
    throw ShapeError("bounds lower/upper dimension mismatch");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) ||
        lower[i] >= upper[i])
      throw DomainError("bounds must be finite with lower < upper");
  }
}

bool Bounds::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != dim()) return false;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    if (!(x[i] >= lower[i] - tol && x[i] <= upper[i] + tol)) return false;
  }
  return true;
}

Eigen::VectorXd Bounds::clip(const Eigen::VectorXd& x) const {
  return x.cwiseMax(lower).cwiseMin(upper);
}

ParameterVector::ParameterVector(Eigen::VectorXd v, Bounds b)
    : values(std::move(v)), bounds(std::move(b)) {
  if (values.size() != bounds.dim())
    throw ShapeError("parameter/bounds dimension mismatch");
  if (!values.allFinite()) throw DomainError("parameter entries must be finite");
  if (!bounds.contains(values))
    throw DomainError("parameter outside its bounds");
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& data) {
  if (data.rows() < 2)
    throw InsufficientDataError("standardizer needs at least 2 rows");
  Standardizer s;
  s.mean_ = data.colwise().mean();
  Eigen::MatrixXd centered = data.rowwise() - s.mean_.transpose();
  const double n = static_cast<double>(data.rows());
  s.scale_ = (centered.array().square().colwise().sum() / n).sqrt();
  s.scale_ = s.scale_.cwiseMax(kScaleFloor);
  return s;
}

Standardizer Standardizer::from_moments(Eigen::VectorXd mean,
                                        Eigen::VectorXd scale) {
  if (mean.size() != scale.size())
    throw ShapeError("standardizer mean/scale size mismatch");
  if ((scale.array() <= 0.0).any())
    throw DomainError("standardizer scales must be positive");
  Standardizer s;
  s.mean_ = std::move(mean);
  s.scale_ = std::move(scale);
  return s;
}

Eigen::MatrixXd Standardizer::transform(const Eigen::MatrixXd& data) const {
  if (data.cols() != dim()) throw ShapeError("standardizer column mismatch");
  return (data.rowwise() - mean_.transpose()).array().rowwise() /
         scale_.transpose().array();
}

Eigen::MatrixXd Standardizer::inverse(const Eigen::MatrixXd& data) const {
  if (data.cols() != dim()) throw ShapeError("standardizer column mismatch");
  return (data.array().rowwise() * scale_.transpose().array()).matrix()
             .rowwise() +
         mean_.transpose();
}

Eigen::VectorXd Standardizer::transform_point(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw ShapeError("standardizer column mismatch");
  return (x - mean_).cwiseQuotient(scale_);
}

Eigen::VectorXd Standardizer::inverse_point(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw ShapeError("standardizer column mismatch");
  return x.cwiseProduct(scale_) + mean_;
}

double Standardizer::transform_scalar(double x) const {
  if (dim() != 1) throw ShapeError("scalar standardizer expected");
  return (x - mean_[0]) / scale_[0];
}

double Standardizer::inverse_scalar(double x) const {
  if (dim() != 1) throw ShapeError("scalar standardizer expected");
  return x * scale_[0] + mean_[0];
}

double empirical_quantile(std::span<const double> samples, double q) {
  if (samples.empty())
    throw InsufficientDataError("empirical_quantile on empty sample set");
  if (!(q > 0.0 && q <= 1.0))
    throw DomainError("quantile level must lie in (0, 1]");
  const auto n = samples.size();
  auto k = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(n)));
  k = std::min(std::max<std::size_t>(k, 1), n);
  std::vector<double> work(samples.begin(), samples.end());
  std::nth_element(work.begin(), work.begin() + (k - 1), work.end());
  return work[k - 1];
}

double log_mean_exp(std::span<const double> values) {
  if (values.empty())
    throw InsufficientDataError("log_mean_exp on empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc / static_cast<double>(values.size()));
}

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double norm_cdf(double x) {
  return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

double gauss_pdf(double x, double mean, double variance) {
  if (variance <= 0.0) throw DomainError("gauss_pdf needs positive variance");
  const double z = (x - mean) / std::sqrt(variance);
  return norm_pdf(z) / std::sqrt(variance);
}

double sample_mean(std::span<const double> values) {
  if (values.empty()) throw InsufficientDataError("mean of empty set");
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

double sample_variance_unbiased(std::span<const double> values) {
  if (values.empty()) throw InsufficientDataError("variance of empty set");
  if (values.size() == 1) return 0.0;
  const double mu = sample_mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - mu) * (v - mu);
  return acc / static_cast<double>(values.size() - 1);
}

double median(std::vector<double> values) {
  if (values.empty()) throw InsufficientDataError("median of empty set");
  const std::size_t n = values.size();
  auto mid = values.begin() + n / 2;
  std::nth_element(values.begin(), mid, values.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(values.begin(), mid);
  return 0.5 * (lo + hi);
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace lfi
