#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <json.hpp>
#include <vector>

#include "lfi/ad.hpp"
#include "lfi/optim.hpp"
#include "lfi/surrogate.hpp"

namespace lfi {

// Gram-matrix jitter for the variational layers. Larger than the exact-GP
// jitter: inducing inputs start with identical latent coordinates, so the
// layer Gram matrices are much closer to singular.
inline constexpr double kLayerJitter = 1e-6;

// k-means++ seeding followed by Lloyd refinement. Returns min(k, n) centers,
// deterministic given the stream.
Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& points, int k,
                               RngStream& rng, int iterations = 25);

// One sparse variational GP layer: RBF kernel with unit variance, ARD
// lengthscales, and an unwhitened Gaussian q(u) per output dimension held as
// a mean column and a lower-triangular covariance factor.
struct SvgpLayer {
  Eigen::MatrixXd z;                    // m x d_in inducing inputs
  Eigen::MatrixXd q_mu;                 // m x d_out
  std::vector<Eigen::MatrixXd> q_tril;  // d_out factors, each m x m
  Eigen::VectorXd log_lengthscales;     // d_in
  bool identity_mean = false;           // requires d_in == d_out

  Eigen::Index inducing() const { return z.rows(); }
  Eigen::Index input_dim() const { return z.cols(); }
  Eigen::Index output_dim() const { return q_mu.cols(); }
};

struct LayerMoments {
  Eigen::MatrixXd mean;      // n x d_out
  Eigen::MatrixXd variance;  // n x d_out
};

// Marginal predictive moments of the layer at each input row.
LayerMoments svgp_layer_moments(const SvgpLayer& layer,
                                const Eigen::MatrixXd& x);

// One marginal draw per row: mean + sqrt(variance) * zeta, zeta n x d_out.
Eigen::MatrixXd svgp_layer_sample(const SvgpLayer& layer,
                                  const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& zeta);

// KL(q(u) || p(u)) summed over output dimensions.
double svgp_layer_kl(const SvgpLayer& layer);

// Factorizations reused across predictions with fixed layer parameters.
struct SvgpPosteriorCache {
  Eigen::MatrixXd chol;        // lower factor of Kmm + jitter
  Eigen::MatrixXd mean_solve;  // chol^{-1} (q_mu - mean(Z))
  std::vector<Eigen::MatrixXd> cov_solve;  // chol^{-1} q_tril per output dim
};

SvgpPosteriorCache svgp_build_cache(const SvgpLayer& layer);

// Propagates a batch through the stack, drawing one marginal sample per
// layer with the supplied noise: h_{l+1} = mean + sqrt(var) * zeta_l.
Eigen::MatrixXd svgp_propagate(const std::vector<SvgpLayer>& layers,
                               const std::vector<SvgpPosteriorCache>& caches,
                               const Eigen::MatrixXd& x0,
                               const std::vector<Eigen::MatrixXd>& zeta);

// Sampling noise for one stochastic bound evaluation, drawn up front so the
// bound is a deterministic function of the parameters.
struct DgpNoise {
  Eigen::MatrixXd w_zeta;                    // (n*k) x 1
  std::vector<Eigen::MatrixXd> layer_zeta;   // per layer, (n*k) x d_out
};

struct DgpConfig {
  int gp_layers = 2;
  int inducing = 50;
  int iw_samples = 5;      // importance-weighted latent draws per point
  int predict_draws = 20;
  int init_steps = 3000;
  int refresh_steps = 500;
  double natgrad_step = 0.01;  // final-layer q(u), natural parameterization
  double adam_step = 0.005;    // everything else
  double sigma2_init = 0.01;
};

// Latent-variable deep GP: the input is augmented with w ~ N(0,1) and pushed
// through gp_layers sparse GP layers; training maximizes the
// importance-weighted variational bound with per-point q(w_n) = N(a_n, b_n).
class DgpSurrogate final : public Surrogate {
 public:
  explicit DgpSurrogate(DgpConfig config = {});

  // Standardizes the evidence, initializes layers (inducing points by
  // k-means++ on the w=0 augmented inputs), and trains for init_steps.
  void fit(const EvidenceSet& evidence, RngStream& rng) override;

  // Keeps standardizers, layer parameters, and optimizer state; registers
  // fresh latent parameters for new points and trains for refresh_steps.
  void refresh(const EvidenceSet& evidence, RngStream& rng) override;

  std::vector<double> predict_samples(const Eigen::VectorXd& theta, int p,
                                      RngStream& rng) const override;
  double noise_variance() const override;
  std::unique_ptr<PredictiveSurface> make_surface(int p,
                                                  RngStream& rng) const override;
  std::string_view kind() const override;

  bool fitted() const { return fitted_; }
  const std::vector<SvgpLayer>& layers() const { return layers_; }
  double sigma2() const { return std::exp(log_sigma2_); }
  // Per-step stochastic bound values from the most recent fit/refresh calls.
  const std::vector<double>& training_trace() const { return trace_; }

  // Frozen-noise bound evaluation for a fixed parameter vector; when grad is
  // non-null it receives d(bound)/d(params) in pack_params() order.
  DgpNoise draw_noise(RngStream& rng) const;
  double bound_with_noise(const DgpNoise& noise,
                          Eigen::VectorXd* grad = nullptr) const;
  // Same bound through the natural-parameterization graph: the final layer's
  // covariance enters as a full matrix S, and grad_cov receives the
  // symmetrized d(bound)/dS used by the natural-gradient update.
  double bound_with_noise_natural(const DgpNoise& noise,
                                  Eigen::MatrixXd* grad_mean = nullptr,
                                  Eigen::MatrixXd* grad_cov = nullptr) const;
  Eigen::VectorXd pack_params() const;
  void unpack_params(const Eigen::VectorXd& packed);

  nlohmann::json to_json() const;
  static DgpSurrogate from_json(const nlohmann::json& j,
                                const EvidenceSet& evidence);

 private:
  struct GraphRefs;

  void init_model(RngStream& rng);
  void train_steps(int steps, RngStream& rng);
  GraphRefs build_graph(ad::Tape& tape, const DgpNoise& noise,
                        bool natural_final) const;
  void rebuild_caches();
  Eigen::VectorXd collect_adam_gradients(const ad::Tape& tape,
                                         const GraphRefs& refs) const;
  void apply_adam_step(const Eigen::VectorXd& step);
  Eigen::Index adam_dim() const;
  void require_fitted() const;

  DgpConfig config_;
  bool fitted_ = false;
  Standardizer std_x_;
  Standardizer std_y_;
  Bounds bounds_;
  Eigen::MatrixXd x_;  // standardized training inputs
  Eigen::VectorXd y_;  // standardized targets
  std::vector<SvgpLayer> layers_;
  std::vector<SvgpPosteriorCache> caches_;
  Eigen::VectorXd a_;      // latent means, one per point
  Eigen::VectorXd log_b_;  // latent log variances
  double log_sigma2_ = 0.0;
  opt::Adam adam_;
  std::vector<double> trace_;
  std::string kind_;
};

}  // namespace lfi
