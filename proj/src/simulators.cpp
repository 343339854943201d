#include "lfi/simulators.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "lfi/errors.hpp"

namespace lfi {

namespace {

void require_open_support(double theta) {
  if (!(theta > 0.0 && theta < 100.0))
    throw DomainError("parameter outside the prior support (0, 100)");
}

}  // namespace

double te1_mean(double theta) {
  return gauss_pdf(theta, 30.0, 15.0) + gauss_pdf(theta, 60.0, 5.0) +
         gauss_pdf(theta, 100.0, 4.0);
}

double te1_simulate(double theta, RngStream& rng) {
  require_open_support(theta);
  return te1_mean(theta) + rng.normal(0.0, std::sqrt(0.005));
}

double te2_branch(double theta, int branch) {
  const double u = std::exp(-0.1 * (theta - 50.0));
  return branch == 0 ? 1.0 / (1.0 + u) : u / (1.0 + u);
}

double te2_simulate(double theta, RngStream& rng) {
  require_open_support(theta);
  const int branch = rng.bernoulli(0.5) ? 1 : 0;
  return te2_branch(theta, branch) + rng.normal(0.0, std::sqrt(0.01));
}

double te3_simulate(double theta, RngStream& rng) {
  require_open_support(theta);
  const double a = rng.beta(theta + 1.0, 5.0);
  const double b = rng.beta(5.0, theta + 1.0);
  return a + b;
}

double euclidean_discrepancy(const Eigen::VectorXd& s_obs,
                             const Eigen::VectorXd& s_theta,
                             const Eigen::VectorXd& weights) {
  if (s_obs.size() != s_theta.size() || s_obs.size() != weights.size())
    throw ShapeError("discrepancy inputs must have equal lengths");
  if ((weights.array() <= 0.0).any())
    throw DomainError("discrepancy weights must be positive");
  return std::sqrt(
      (weights.array() * (s_obs - s_theta).array().square()).sum());
}

Eigen::VectorXd SimulatorSpec::sample_prior(RngStream& rng) const {
  Eigen::VectorXd x(bounds.dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double pad = kInsideNudge * (bounds.upper[i] - bounds.lower[i]);
    x[i] = rng.uniform(bounds.lower[i] + pad, bounds.upper[i] - pad);
  }
  return x;
}

double SimulatorSpec::discrepancy(const Eigen::VectorXd& summary) const {
  return euclidean_discrepancy(s_obs, summary, weights);
}

std::vector<std::string> simulator_names() {
  return {"te1", "te2", "te3", "nw"};
}

SimulatorSpec make_simulator(const std::string& name,
                             const SimulatorOptions& opts) {
  SimulatorSpec spec;
  spec.name = name;

  const auto scalar_box = [] {
    return Bounds(Eigen::VectorXd::Constant(1, 0.0),
                  Eigen::VectorXd::Constant(1, 100.0));
  };

  if (name == "te1" || name == "te2" || name == "te3") {
    spec.bounds = scalar_box();
    const double truth = name == "te1" ? 50.0 : 20.0;
    spec.theta_obs =
        ParameterVector(Eigen::VectorXd::Constant(1, truth), spec.bounds);
    spec.weights = Eigen::VectorXd::Ones(1);
    double (*sim)(double, RngStream&) =
        name == "te1" ? te1_simulate
                      : (name == "te2" ? te2_simulate : te3_simulate);
    spec.simulate = [sim](const Eigen::VectorXd& theta, RngStream& rng) {
      return Eigen::VectorXd::Constant(1, sim(theta[0], rng)).eval();
    };
  } else if (name == "nw") {
    spec.bounds =
        Bounds(Eigen::VectorXd::Constant(5, -20.0), Eigen::VectorXd::Zero(5));
    Eigen::VectorXd truth(5);
    truth << 0.0, -1.0, -1.0, -5.0, -10.0;
    spec.theta_obs = ParameterVector(truth, spec.bounds);
    spec.weights = Eigen::VectorXd::Ones(15);
    auto world = std::make_shared<GridWorld>(
        opts.nw.map_path.empty() ? GridWorld::default_map()
                                 : GridWorld::load(opts.nw.map_path));
    spec.simulate = [world, nw = opts.nw, box = spec.bounds](
                        const Eigen::VectorXd& theta, RngStream& rng) {
      if (!box.contains(theta))
        throw DomainError("parameter outside the prior box");
      return nw_simulate(*world, theta, nw, rng);
    };
  } else {
    throw ConfigError("unknown simulator: " + name);
  }

  RngStream obs_rng(opts.observation_seed, kObservationStreamId);
  spec.s_obs = spec.simulate(spec.theta_obs.values, obs_rng);
  return spec;
}

}  // namespace lfi
