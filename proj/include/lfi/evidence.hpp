#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "lfi/math.hpp"

namespace lfi {

enum class Provenance : std::uint8_t { initial = 0, acquired = 1 };

// Growing collection of (parameter, discrepancy) pairs in raw simulator
// units, tagged by how each point was obtained.
class EvidenceSet {
 public:
  EvidenceSet() = default;
  explicit EvidenceSet(Bounds bounds) : bounds_(std::move(bounds)) {}

  // Validates theta against the bounds and requires a finite, non-negative
  // discrepancy.
  void add(const Eigen::VectorXd& theta, double delta, Provenance tag);

  Eigen::Index size() const { return static_cast<Eigen::Index>(deltas_.size()); }
  Eigen::Index param_dim() const { return bounds_.dim(); }
  const Bounds& bounds() const { return bounds_; }

  const Eigen::VectorXd& parameter(Eigen::Index i) const {
    return thetas_[static_cast<std::size_t>(i)];
  }
  double discrepancy(Eigen::Index i) const {
    return deltas_[static_cast<std::size_t>(i)];
  }
  Provenance provenance(Eigen::Index i) const {
    return tags_[static_cast<std::size_t>(i)];
  }

  // Stacked views: rows are points.
  Eigen::MatrixXd parameters() const;
  Eigen::VectorXd discrepancies() const;

  // Standardizers fitted to the current contents (>= 2 points required).
  Standardizer parameter_standardizer() const;
  Standardizer discrepancy_standardizer() const;

 private:
  Bounds bounds_;
  std::vector<Eigen::VectorXd> thetas_;
  std::vector<double> deltas_;
  std::vector<Provenance> tags_;
};

}  // namespace lfi
