#include "lfi/bolfi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <utility>

#include "lfi/errors.hpp"
#include "lfi/optim.hpp"

namespace lfi {

namespace {

constexpr int kBatchNoiseTries = 100;

void check_eta(double eta_sq) {
  if (!(eta_sq >= 0.0))
    throw DomainError("acquisition: eta_sq must be non-negative");
}

// Pulls a point strictly inside the box so simulators with open supports are
// never probed exactly on the boundary.
Eigen::VectorXd nudge_inside(const Eigen::VectorXd& x, const Bounds& bounds) {
  Eigen::VectorXd out = x;
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    const double pad = kInsideNudge * (bounds.upper[j] - bounds.lower[j]);
    out[j] = std::clamp(out[j], bounds.lower[j] + pad, bounds.upper[j] - pad);
  }
  return out;
}

class CallLogger {
 public:
  CallLogger(std::ostream* out, Eigen::Index dim) : out_(out) {
    if (out_ == nullptr) return;
    *out_ << "call,provenance,status,delta,seconds";
    for (Eigen::Index j = 0; j < dim; ++j) *out_ << ",theta_" << j;
    *out_ << '\n';
  }

  void row(int index, Provenance tag, bool ok, double delta, double seconds,
           const Eigen::VectorXd& theta) const {
    if (out_ == nullptr) return;
    *out_ << index << ','
          << (tag == Provenance::initial ? "initial" : "acquired") << ','
          << (ok ? "ok" : "failed") << ',' << format_double(delta) << ','
          << format_double(seconds);
    for (Eigen::Index j = 0; j < theta.size(); ++j)
      *out_ << ',' << format_double(theta[j]);
    *out_ << '\n';
  }

 private:
  std::ostream* out_;
};

}  // namespace

void validate(const AcquisitionConfig& config) {
  if (!(config.eps_q > 0.0 && config.eps_q <= 1.0))
    throw ConfigError("acquisition: eps_q must lie in (0, 1]");
  if (!(config.delta > 0.0 && config.delta < 1.0))
    throw ConfigError("acquisition: delta must lie in (0, 1)");
  if (config.restarts < 1)
    throw ConfigError("acquisition: restarts must be >= 1");
  if (config.memory < 1)
    throw ConfigError("acquisition: memory must be >= 1");
  if (config.max_evals < 1)
    throw ConfigError("acquisition: max_evals must be >= 1");
  if (config.predict_draws < 1)
    throw ConfigError("acquisition: predict_draws must be >= 1");
  if (!(config.noise_scale >= 0.0))
    throw ConfigError("acquisition: noise_scale must be non-negative");
  if (!(config.fd_step > 0.0))
    throw ConfigError("acquisition: fd_step must be positive");
}

double exploration_weight(int t, Eigen::Index dim, double delta) {
  if (t < 1) throw DomainError("exploration_weight: t counts from 1");
  if (dim < 1) throw DomainError("exploration_weight: dim must be >= 1");
  if (!(delta > 0.0 && delta < 1.0))
    throw DomainError("exploration_weight: delta must lie in (0, 1)");
  const double exponent = 0.5 * static_cast<double>(dim) + 2.0;
  const double pi = std::numbers::pi;
  return 2.0 * (exponent * std::log(static_cast<double>(t)) +
                std::log(pi * pi / (3.0 * delta)));
}

double quantile_lcb(const PredictiveSurface& surface,
                    const Eigen::VectorXd& theta, double eta_sq,
                    double eps_q) {
  check_eta(eta_sq);
  const QuantileMoments qm = surface.moments(theta, eps_q);
  return qm.mu_q - std::sqrt(eta_sq * qm.nu_q);
}

double quantile_lcb(const Surrogate& surrogate, const Eigen::VectorXd& theta,
                    double eta_sq, const AcquisitionConfig& config,
                    RngStream& rng) {
  validate(config);
  const auto surface = surrogate.make_surface(config.predict_draws, rng);
  return quantile_lcb(*surface, theta, eta_sq, config.eps_q);
}

Eigen::VectorXd minimize_acquisition(const Surrogate& surrogate, double eta_sq,
                                     const AcquisitionConfig& config,
                                     const Bounds& bounds, RngStream& rng,
                                     bool* used_fallback) {
  validate(config);
  check_eta(eta_sq);
  if (bounds.dim() < 1)
    throw DomainError("acquisition: bounds must have at least one dimension");
  if (!bounds.lower.allFinite() || !bounds.upper.allFinite())
    throw DomainError("acquisition: bounds must be finite");

  const auto surface = surrogate.make_surface(config.predict_draws, rng);
  opt::ValueFn value = [&](const Eigen::VectorXd& x) {
    return quantile_lcb(*surface, x, eta_sq, config.eps_q);
  };

  opt::MultiStartOptions ms;
  ms.restarts = config.restarts;
  ms.local.memory = config.memory;
  ms.local.max_evals = config.max_evals;
  const opt::MultiStartResult best = opt::minimize_multistart(
      opt::with_central_differences(std::move(value), config.fd_step, bounds),
      bounds, ms, rng);
  if (used_fallback != nullptr) *used_fallback = best.used_fallback;
  return bounds.clip(best.x);
}

std::vector<Eigen::VectorXd> acquisition_batch(const Eigen::VectorXd& center,
                                               int count, double noise_scale,
                                               const Bounds& bounds,
                                               RngStream& rng) {
  if (count < 1) throw ConfigError("acquisition: batch count must be >= 1");
  if (!(noise_scale >= 0.0))
    throw ConfigError("acquisition: noise_scale must be non-negative");
  if (!bounds.contains(center))
    throw DomainError("acquisition: batch center outside bounds");

  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(count));
  out.push_back(center);
  const Eigen::VectorXd sd = noise_scale * bounds.range();
  for (int b = 1; b < count; ++b) {
    Eigen::VectorXd point(center.size());
    for (Eigen::Index j = 0; j < point.size(); ++j) {
      double v = center[j];
      for (int tries = 0; tries < kBatchNoiseTries; ++tries) {
        v = center[j] + rng.normal(0.0, sd[j]);
        if (v >= bounds.lower[j] && v <= bounds.upper[j]) break;
      }
      point[j] = std::clamp(v, bounds.lower[j], bounds.upper[j]);
    }
    out.push_back(std::move(point));
  }
  return out;
}

std::unique_ptr<Surrogate> make_surrogate(const std::string& kind,
                                          const GpConfig& gp,
                                          const DgpConfig& dgp) {
  if (kind == "gp") return std::make_unique<GpSurrogate>(gp);
  DgpConfig config = dgp;
  if (kind == "lv-gp") {
    config.gp_layers = 1;
  } else if (kind == "lv-2gp") {
    config.gp_layers = 2;
  } else if (kind == "lv-3gp") {
    config.gp_layers = 3;
  } else {
    throw ConfigError("surrogate kind must be gp, lv-gp, lv-2gp or lv-3gp: " +
                      kind);
  }
  return std::make_unique<DgpSurrogate>(config);
}

BolfiResult bolfi_run(const SimulatorSpec& simulator,
                      const std::string& surrogate_kind, int n_init,
                      int s_total, const BolfiOptions& options,
                      RngStream& rng) {
  if (n_init < 2)
    throw ConfigError("bolfi: n_init must be >= 2");
  if (s_total < n_init)
    throw ConfigError("bolfi: s_total must be >= n_init");
  if (options.batch_size < 1)
    throw ConfigError("bolfi: batch_size must be >= 1");
  if (options.gp_refit_every < 1)
    throw ConfigError("bolfi: gp_refit_every must be >= 1");
  validate(options.acquisition);

  BolfiResult result;
  result.surrogate = make_surrogate(surrogate_kind, options.gp, options.dgp);
  result.evidence = EvidenceSet(simulator.bounds);

  const CallLogger log(options.call_log, simulator.param_dim());

  struct Outcome {
    double delta = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
  };
  const auto simulate_once = [&](const Eigen::VectorXd& theta,
                                 Provenance tag) {
    ++result.simulator_calls;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      const Eigen::VectorXd summary = simulator.simulate(theta, rng);
      const double delta = simulator.discrepancy(summary);
      if (std::isfinite(delta)) {
        out.delta = delta;
        out.ok = true;
      }
    } catch (const std::exception&) {
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (!out.ok) ++result.failed_calls;
    log.row(result.simulator_calls - 1, tag, out.ok, out.delta, seconds,
            theta);
    return out;
  };

  // Runs one budget slot: simulate, on failure retry once at a resampled
  // point, then record the evidence.
  const auto fill_slot = [&](const Eigen::VectorXd& theta, Provenance tag,
                             const std::function<Eigen::VectorXd()>& redraw) {
    Eigen::VectorXd point = nudge_inside(theta, simulator.bounds);
    Outcome out = simulate_once(point, tag);
    if (!out.ok) {
      point = nudge_inside(redraw(), simulator.bounds);
      out = simulate_once(point, tag);
      if (!out.ok)
        throw SimulationError(
            "bolfi: simulator failed twice while filling one budget slot");
    }
    result.evidence.add(point, out.delta, tag);
  };

  for (int i = 0; i < n_init; ++i) {
    fill_slot(simulator.sample_prior(rng), Provenance::initial,
              [&] { return simulator.sample_prior(rng); });
  }
  result.surrogate->fit(result.evidence, rng);

  const bool vanilla_gp = result.surrogate->kind() == "gp";
  int t = 0;
  while (result.evidence.size() < s_total) {
    ++t;
    const double eta_sq =
        exploration_weight(t, simulator.param_dim(), options.acquisition.delta);
    bool fallback = false;
    const Eigen::VectorXd center =
        minimize_acquisition(*result.surrogate, eta_sq, options.acquisition,
                             simulator.bounds, rng, &fallback);
    if (fallback) ++result.acquisition_fallbacks;

    const int remaining = static_cast<int>(s_total - result.evidence.size());
    const int batch = std::min(options.batch_size, remaining);
    const auto jittered = [&] {
      return acquisition_batch(center, 2, options.acquisition.noise_scale,
                               simulator.bounds, rng)[1];
    };
    for (const Eigen::VectorXd& theta :
         acquisition_batch(center, batch, options.acquisition.noise_scale,
                           simulator.bounds, rng)) {
      fill_slot(theta, Provenance::acquired, jittered);
    }

    if (result.evidence.size() >= s_total) break;
    if (vanilla_gp && t % options.gp_refit_every == 0) {
      result.surrogate->fit(result.evidence, rng);
    } else {
      result.surrogate->refresh(result.evidence, rng);
    }
  }

  result.surrogate->fit(result.evidence, rng);

  if (result.evidence.size() != s_total ||
      result.simulator_calls != s_total + result.failed_calls) {
    throw StateError("bolfi: budget accounting violated");
  }
  return result;
}

}  // namespace lfi
