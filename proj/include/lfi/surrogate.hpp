#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "lfi/evidence.hpp"
#include "lfi/rng.hpp"

namespace lfi {

struct PredictiveMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Mean and unbiased variance of the samples at or below their lower
// empirical quantile; variance is 0 when a single sample survives.
struct QuantileMoments {
  double mu_q = 0.0;
  double nu_q = 0.0;
  int count = 0;
};

QuantileMoments quantile_moments(std::span<const double> samples,
                                 double eps_q);

// A frozen view of a surrogate's predictive distribution: any sampling noise
// is drawn once at construction (common random numbers), so the surface is a
// deterministic function of theta and can be probed by a numerical optimizer.
class PredictiveSurface {
 public:
  virtual ~PredictiveSurface() = default;

  // Quantile-conditioned predictive moments at theta, raw target units.
  virtual QuantileMoments moments(const Eigen::VectorXd& theta,
                                  double eps_q) const = 0;
};

// Discrepancy surrogate contract shared by the exact-GP and deep-GP models.
// All public inputs and outputs are in raw simulator units; standardization
// is internal and frozen between fits.
class Surrogate {
 public:
  virtual ~Surrogate() = default;

  // Full (re)train on the evidence, refitting internal standardizers.
  virtual void fit(const EvidenceSet& evidence, RngStream& rng) = 0;

  // Lightweight update after the evidence grew; keeps standardizers and, for
  // the deep model, continues optimization from the current state.
  virtual void refresh(const EvidenceSet& evidence, RngStream& rng) = 0;

  // p draws of the predicted discrepancy at theta, including likelihood
  // noise.
  virtual std::vector<double> predict_samples(const Eigen::VectorXd& theta,
                                              int p, RngStream& rng) const = 0;

  // Likelihood noise variance in raw target units.
  virtual double noise_variance() const = 0;

  virtual std::unique_ptr<PredictiveSurface> make_surface(
      int p, RngStream& rng) const = 0;

  virtual std::string_view kind() const = 0;
};

}  // namespace lfi
