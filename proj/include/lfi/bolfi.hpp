#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "lfi/dgp.hpp"
#include "lfi/evidence.hpp"
#include "lfi/gp.hpp"
#include "lfi/simulators.hpp"
#include "lfi/surrogate.hpp"

namespace lfi {

// Controls for one acquisition-function minimization.
struct AcquisitionConfig {
  double eps_q = 0.3;      // lower-quantile mass used for conditioning
  double delta = 0.1;      // confidence parameter of the exploration schedule
  int restarts = 10;       // local searches per acquisition
  int memory = 10;         // quasi-Newton history length
  int max_evals = 100;     // objective evaluations per local search
  int predict_draws = 20;  // frozen samples behind one acquisition surface
  double noise_scale = 0.05;  // batch jitter, fraction of each range
  double fd_step = 1e-4;   // central-difference step on the surface
};

void validate(const AcquisitionConfig& config);

// Exploration weight after t acquisitions over a dim-dimensional box:
// eta_t^2 = 2 log(t^(dim/2 + 2) pi^2 / (3 delta)). t counts from the first
// acquisition; initial-design points do not advance it.
double exploration_weight(int t, Eigen::Index dim, double delta);

// mu_q(theta) - sqrt(eta_sq * nu_q(theta)) on a frozen predictive surface.
double quantile_lcb(const PredictiveSurface& surface,
                    const Eigen::VectorXd& theta, double eta_sq, double eps_q);

// Same bound through a fresh one-shot surface drawn from the surrogate.
double quantile_lcb(const Surrogate& surrogate, const Eigen::VectorXd& theta,
                    double eta_sq, const AcquisitionConfig& config,
                    RngStream& rng);

// Multi-start bounded quasi-Newton minimization of the quantile LCB over one
// frozen surface (common random numbers), with central-difference gradients.
// When every local search fails the best of 256 uniform probes is returned
// and *used_fallback (if non-null) is set.
Eigen::VectorXd minimize_acquisition(const Surrogate& surrogate, double eta_sq,
                                     const AcquisitionConfig& config,
                                     const Bounds& bounds, RngStream& rng,
                                     bool* used_fallback = nullptr);

// Batch around a minimizer: the first point is the minimizer itself, later
// ones add per-dimension Gaussian noise with sd = noise_scale * range,
// redrawn until inside the box (clipped as a last resort).
std::vector<Eigen::VectorXd> acquisition_batch(const Eigen::VectorXd& center,
                                               int count, double noise_scale,
                                               const Bounds& bounds,
                                               RngStream& rng);

// Builds the surrogate for a kind string: "gp", "lv-gp", "lv-2gp" or
// "lv-3gp". The layer count in `dgp` is overridden by the kind.
std::unique_ptr<Surrogate> make_surrogate(const std::string& kind,
                                          const GpConfig& gp,
                                          const DgpConfig& dgp);

struct BolfiOptions {
  AcquisitionConfig acquisition;
  GpConfig gp;
  DgpConfig dgp;
  int gp_refit_every = 10;  // full GP hyperparameter refit cadence
  int batch_size = 1;       // simulator calls per acquisition round
  // Optional CSV sink: a header row, then one row per simulator invocation
  // (call index, provenance, status, discrepancy, wall seconds, theta).
  // Wall-clock timings make the stream non-deterministic.
  std::ostream* call_log = nullptr;
};

struct BolfiResult {
  std::unique_ptr<Surrogate> surrogate;
  EvidenceSet evidence;
  int simulator_calls = 0;        // total invocations, failed ones included
  int failed_calls = 0;           // invocations that raised or returned non-finite
  int acquisition_fallbacks = 0;  // rounds settled by the random-probe fallback
};

// Budgeted surrogate training loop: draws n_init prior points, simulates and
// fits, then acquires by quantile-LCB minimization until the evidence holds
// exactly s_total points, refreshing the surrogate between rounds (the deep
// model every round, the GP with a full refit every gp_refit_every rounds)
// and fully retraining it before returning. A failed simulator call is
// logged, retried once at a resampled point, and aborts the run with
// SimulationError on the second failure; failures do not consume evidence
// slots, so simulator_calls == s_total + failed_calls.
BolfiResult bolfi_run(const SimulatorSpec& simulator,
                      const std::string& surrogate_kind, int n_init,
                      int s_total, const BolfiOptions& options,
                      RngStream& rng);

}  // namespace lfi
