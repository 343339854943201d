#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "lfi/bolfi.hpp"
#include "lfi/math.hpp"
#include "lfi/rng.hpp"
#include "lfi/simulators.hpp"
#include "lfi/surrogate.hpp"

namespace lfi {

// Uniform ABC kernel: 1/epsilon on [0, epsilon), 0 outside. The tolerance
// must be positive and the discrepancy non-negative.
double uniform_kernel(double delta, double epsilon);

struct AbcKernel {
  explicit AbcKernel(double eps);
  double operator()(double delta) const { return uniform_kernel(delta, epsilon); }
  double epsilon;
};

// Minimum of the surrogate's quantile-conditioned predictive mean over the
// box, found by multi-start bounded quasi-Newton on one frozen surface; the
// exploration fields of the config are ignored. Falls back to the best of
// 10^4 random probes when every local search fails (*used_fallback reports
// that). The returned threshold is always finite.
double surrogate_threshold(const Surrogate& surrogate, const Bounds& bounds,
                           const AcquisitionConfig& config, RngStream& rng,
                           bool* used_fallback = nullptr);

// Phi((eps - mu_q) / sqrt(nu_q + sigma2)): the probability that the
// predicted discrepancy falls below the threshold, used as an unnormalized
// likelihood. nu_q and sigma2 must be non-negative with a positive sum.
double approximate_likelihood(double mu_q, double nu_q, double sigma2,
                              double eps);

struct WeightedPosterior {
  Eigen::MatrixXd samples;  // rows are prior draws
  Eigen::VectorXd weights;  // non-negative, sum to 1
  double ess = 0.0;         // (sum w)^2 / sum w^2 of the raw weights
  bool flat_fallback = false;  // every raw weight was zero
};

struct PosteriorConfig {
  double eps_q = 0.3;      // quantile mass behind the surrogate moments
  int predict_draws = 20;  // frozen samples behind the shared surface
};

// Draws `count` uniform prior samples in the box, weights each by the
// approximate likelihood at the configured threshold using one frozen
// surface, and normalizes. If every weight underflows to zero the weights
// are replaced by the flat distribution and flat_fallback is set.
WeightedPosterior weighted_posterior_samples(const Surrogate& surrogate,
                                             const Bounds& prior, int count,
                                             double eps,
                                             const PosteriorConfig& config,
                                             RngStream& rng);

// Systematic (low-variance) resampling to `count` unweighted rows.
Eigen::MatrixXd systematic_resample(const WeightedPosterior& posterior,
                                    Eigen::Index count, RngStream& rng);

// Simulates `budget` prior draws and keeps the round(budget * keep) with the
// smallest discrepancies (ties broken by draw index) as the reference
// posterior sample, rows ordered by increasing discrepancy. Failed simulator
// calls are skipped and counted in *failed if non-null.
Eigen::MatrixXd rejection_abc_reference(const SimulatorSpec& simulator,
                                        long budget, double keep,
                                        RngStream& rng, long* failed = nullptr);

inline constexpr std::uint64_t kAbcReferenceStreamId = 2'000'003;

// Disk-cached reference: the sample set is keyed by (simulator, budget,
// keep, seed) under cache_dir with a checksummed manifest; a hit skips the
// simulation entirely, and a corrupt or mismatched entry is recomputed. The
// draws come from RngStream(seed, kAbcReferenceStreamId).
Eigen::MatrixXd cached_abc_reference(const SimulatorSpec& simulator,
                                     long budget, double keep,
                                     std::uint64_t seed,
                                     const std::string& cache_dir);

// Divides every distance by the smallest one; the best model maps to 1.
std::map<std::string, double> scaled_wasserstein(
    const std::map<std::string, double>& distances);

// Plain sample matrix as CSV (theta_0..theta_{d-1} header), values written
// in round-trip decimal form.
void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples);
Eigen::MatrixXd read_samples_csv(std::istream& in);

// Posterior CSV with a trailing weight column.
void write_posterior_csv(std::ostream& out, const WeightedPosterior& posterior);

}  // namespace lfi
