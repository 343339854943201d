#include "lfi/evidence.hpp"

#include <cmath>

#include "lfi/errors.hpp"

namespace lfi {

void EvidenceSet::add(const Eigen::VectorXd& theta, double delta,
                      Provenance tag) {
  if (theta.size() != bounds_.dim())
    throw ShapeError("evidence parameter has wrong dimension");
  if (!bounds_.contains(theta))
    throw DomainError("evidence parameter outside bounds");
  if (!std::isfinite(delta) || delta < 0.0)
    throw DomainError("discrepancy must be finite and non-negative");
  thetas_.push_back(theta);
  deltas_.push_back(delta);
  tags_.push_back(tag);
}

Eigen::MatrixXd EvidenceSet::parameters() const {
  Eigen::MatrixXd out(size(), param_dim());
  for (Eigen::Index i = 0; i < size(); ++i)
    out.row(i) = thetas_[static_cast<std::size_t>(i)].transpose();
  return out;
}

Eigen::VectorXd EvidenceSet::discrepancies() const {
  return Eigen::Map<const Eigen::VectorXd>(deltas_.data(), size());
}

Standardizer EvidenceSet::parameter_standardizer() const {
  return Standardizer::fit(parameters());
}

Standardizer EvidenceSet::discrepancy_standardizer() const {
  return Standardizer::fit(discrepancies());
}

}  // namespace lfi
