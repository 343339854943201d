#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include "lfi/surrogate.hpp"

namespace lfi {

// Hyperparameters in standardized data units: ARD lengthscales, RBF signal
// variance, constant (bias) kernel variance, and Gaussian noise variance.
struct GpHyperparams {
  Eigen::VectorXd lengthscales;
  double kernel_variance = 1.0;
  double bias_variance = 1.0;
  double noise_variance = 0.1;
};

// Exponential (gamma with unit coefficient of variation) prior means for the
// hyperparameters, moment-matched to standardized evidence.
struct GpPriors {
  Eigen::VectorXd lengthscale_mean;
  double kernel_variance_mean = 1.0;
  double bias_variance_mean = 1.0;
  double noise_variance_mean = 0.1;
};

struct GpConfig {
  int restarts = 5;
  int max_evals = 50;
};

// Log marginal likelihood of y ~ N(0, K) with
// K = rbf(X; lengthscales, kernel_variance) + bias_variance
//   + noise_variance * I (plus factorization jitter).
// When grad_log is non-null it receives the gradient with respect to the log
// hyperparameters, ordered [log lengthscales..., log kernel variance,
// log bias variance, log noise variance].
double gp_log_marginal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const GpHyperparams& h,
                       Eigen::VectorXd* grad_log = nullptr);

// Exact GP regression on standardized (theta, discrepancy) evidence with
// maximum-a-posteriori hyperparameters under the exponential priors.
class GpSurrogate final : public Surrogate {
 public:
  explicit GpSurrogate(GpConfig config = {}) : config_(config) {}

  // MAP fit: refits standardizers and runs `restarts` bounded quasi-Newton
  // searches of `max_evals` objective evaluations each in log space.
  void fit(const EvidenceSet& evidence, RngStream& rng) override;

  // Recomputes the predictive cache on new evidence while keeping the fitted
  // hyperparameters and standardizers.
  void refresh(const EvidenceSet& evidence, RngStream& rng) override;

  // Fits with caller-supplied hyperparameters (no optimization).
  void fit_fixed(const EvidenceSet& evidence, const GpHyperparams& hypers);

  // Posterior mean and latent variance (no noise) at theta, raw units.
  PredictiveMoments predict_moments(const Eigen::VectorXd& theta) const;

  std::vector<double> predict_samples(const Eigen::VectorXd& theta, int p,
                                      RngStream& rng) const override;
  double noise_variance() const override;
  std::unique_ptr<PredictiveSurface> make_surface(int p,
                                                  RngStream& rng) const override;
  std::string_view kind() const override { return "gp"; }

  bool fitted() const { return fitted_; }
  const GpHyperparams& hyperparams() const;

  // MAP objective (log marginal likelihood plus log priors) at the current
  // hyperparameters, and its value at the optimizer's starting point.
  double map_objective() const;
  double initial_objective() const;

  // Serialization of hyperparameters and standardizers; loading rebuilds the
  // predictive cache from the supplied evidence.
  nlohmann::json to_json() const;
  static GpSurrogate from_json(const nlohmann::json& j,
                               const EvidenceSet& evidence);

 private:
  void rebuild_cache(const EvidenceSet& evidence);
  double objective_at(const GpHyperparams& h) const;

  GpConfig config_;
  bool fitted_ = false;
  double initial_objective_ = 0.0;
  GpHyperparams hypers_;
  GpPriors priors_;
  Standardizer std_x_;
  Standardizer std_y_;
  Bounds bounds_;
  Eigen::MatrixXd x_;       // standardized inputs
  Eigen::VectorXd y_;       // standardized targets
  Eigen::MatrixXd chol_l_;  // lower Cholesky of K
  Eigen::VectorXd alpha_;   // K^{-1} y
};

// Lower confidence bound m(theta) - sqrt(eta_sq * v(theta)) from the
// analytic posterior moments, raw units. eta_sq must be non-negative.
double lcb_acquisition(const GpSurrogate& gp, const Eigen::VectorXd& theta,
                       double eta_sq);

}  // namespace lfi
