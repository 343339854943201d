#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lfi/gridworld.hpp"
#include "lfi/math.hpp"
#include "lfi/rng.hpp"

namespace lfi {

// Relative pad that keeps sampled or clipped parameters strictly inside an
// open prior support.
inline constexpr double kInsideNudge = 1e-9;

// Noise-free part of the first toy simulator: the sum of three Gaussian
// densities evaluated at theta. The second parameter of each component is its
// variance.
double te1_mean(double theta);

// te1_mean(theta) plus N(0, 0.005) observation noise. theta must lie strictly
// inside (0, 100).
double te1_simulate(double theta, RngStream& rng);

// Noise-free branch values of the second toy simulator: with
// u = exp(-0.1 (theta - 50)), branch 0 is 1/(1+u) and branch 1 is u/(1+u).
double te2_branch(double theta, int branch);

// Picks one branch with probability 1/2 and adds N(0, 0.01) noise.
double te2_simulate(double theta, RngStream& rng);

// One draw of Beta(theta+1, 5) plus one draw of Beta(5, theta+1).
double te3_simulate(double theta, RngStream& rng);

// sqrt( sum_i w_i (a_i - b_i)^2 ). Throws ShapeError on length mismatch and
// DomainError on non-positive weights.
double euclidean_discrepancy(const Eigen::VectorXd& s_obs,
                             const Eigen::VectorXd& s_theta,
                             const Eigen::VectorXd& weights);

// A registered simulator: parameter box (the uniform prior), ground truth,
// the observed summary generated at the ground truth, and the weighted
// discrepancy against it.
struct SimulatorSpec {
  std::string name;
  Bounds bounds;
  ParameterVector theta_obs;
  Eigen::VectorXd s_obs;
  Eigen::VectorXd weights;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, RngStream&)> simulate;

  Eigen::Index param_dim() const { return bounds.dim(); }
  Eigen::Index summary_dim() const { return s_obs.size(); }

  // Uniform draw from the prior box (nudged strictly inside open supports).
  Eigen::VectorXd sample_prior(RngStream& rng) const;

  // Discrepancy of a summary against the observed one.
  double discrepancy(const Eigen::VectorXd& summary) const;
};

struct SimulatorOptions {
  NwOptions nw;
  // Seed of the dedicated stream that generates the observed summary; kept
  // separate from run seeds so every run of an experiment sees the same
  // observation.
  std::uint64_t observation_seed = 0;
};

inline constexpr std::uint64_t kObservationStreamId = 1'000'003;

// Names accepted by make_simulator: "te1", "te2", "te3", "nw".
std::vector<std::string> simulator_names();

// Builds the named simulator, generating s_obs at the ground truth with the
// observation stream. Throws ConfigError for unknown names.
SimulatorSpec make_simulator(const std::string& name,
                             const SimulatorOptions& opts = {});

}  // namespace lfi
