#include "lfi/gp.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "lfi/errors.hpp"
#include "lfi/kernels.hpp"
#include "lfi/optim.hpp"

namespace lfi {

namespace {

Eigen::VectorXd pack_log(const GpHyperparams& h) {
  const Eigen::Index d = h.lengthscales.size();
  Eigen::VectorXd phi(d + 3);
  phi.head(d) = h.lengthscales.array().log();
  phi[d] = std::log(h.kernel_variance);
  phi[d + 1] = std::log(h.bias_variance);
  phi[d + 2] = std::log(h.noise_variance);
  return phi;
}

GpHyperparams unpack_log(const Eigen::VectorXd& phi) {
  const Eigen::Index d = phi.size() - 3;
  GpHyperparams h;
  h.lengthscales = phi.head(d).array().exp();
  h.kernel_variance = std::exp(phi[d]);
  h.bias_variance = std::exp(phi[d + 1]);
  h.noise_variance = std::exp(phi[d + 2]);
  return h;
}

// log density of Exponential(mean) at x, as a function of log x, plus its
// derivative d/d(log x) = -x / mean.
double log_prior(const GpHyperparams& h, const GpPriors& p,
                 Eigen::VectorXd* grad_log) {
  double lp = 0.0;
  const Eigen::Index d = h.lengthscales.size();
  if (grad_log != nullptr) grad_log->setZero(d + 3);
  const auto accum = [&](Eigen::Index idx, double value, double mean) {
    lp += -std::log(mean) - value / mean;
    if (grad_log != nullptr) (*grad_log)[idx] = -value / mean;
  };
  for (Eigen::Index j = 0; j < d; ++j)
    accum(j, h.lengthscales[j], p.lengthscale_mean[j]);
  accum(d, h.kernel_variance, p.kernel_variance_mean);
  accum(d + 1, h.bias_variance, p.bias_variance_mean);
  accum(d + 2, h.noise_variance, p.noise_variance_mean);
  return lp;
}

}  // namespace

double gp_log_marginal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const GpHyperparams& h, Eigen::VectorXd* grad_log) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != n) throw ShapeError("gp: input/target size mismatch");
  if (h.lengthscales.size() != d)
    throw ShapeError("gp: lengthscale dimension mismatch");
  if (h.kernel_variance <= 0.0 || h.bias_variance <= 0.0 ||
      h.noise_variance <= 0.0)
    throw InvalidHyperparameterError("gp: variances must be positive");

  const Eigen::MatrixXd rbf =
      rbf_kernel_matrix(X, h.lengthscales, h.kernel_variance);
  Eigen::MatrixXd k = rbf;
  k.array() += h.bias_variance;
  k.diagonal().array() += h.noise_variance;
  const auto llt = cholesky_with_jitter(k);
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const double lml = -0.5 * y.dot(alpha) - 0.5 * logdet -
                     0.5 * static_cast<double>(n) *
                         std::log(2.0 * std::numbers::pi);

  if (grad_log != nullptr) {
    grad_log->resize(d + 3);
    const Eigen::MatrixXd kinv =
        llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd w = alpha * alpha.transpose() - kinv;
    for (Eigen::Index j = 0; j < d; ++j) {
      const Eigen::VectorXd col = X.col(j);
      const Eigen::MatrixXd dist2 =
          (col.replicate(1, n) - col.transpose().replicate(n, 1))
              .array()
              .square()
              .matrix();
      const Eigen::MatrixXd dk =
          (rbf.array() * dist2.array() /
           (h.lengthscales[j] * h.lengthscales[j]))
              .matrix();
      (*grad_log)[j] = 0.5 * (w.array() * dk.array()).sum();
    }
    (*grad_log)[d] = 0.5 * (w.array() * rbf.array()).sum();
    (*grad_log)[d + 1] = 0.5 * h.bias_variance * w.sum();
    (*grad_log)[d + 2] = 0.5 * h.noise_variance * w.trace();
  }
  return lml;
}

const GpHyperparams& GpSurrogate::hyperparams() const {
  if (!fitted_) throw StateError("gp: not fitted");
  return hypers_;
}

double GpSurrogate::objective_at(const GpHyperparams& h) const {
  return gp_log_marginal(x_, y_, h) + log_prior(h, priors_, nullptr);
}

double GpSurrogate::map_objective() const {
  if (!fitted_) throw StateError("gp: not fitted");
  return objective_at(hypers_);
}

double GpSurrogate::initial_objective() const {
  if (!fitted_) throw StateError("gp: not fitted");
  return initial_objective_;
}

void GpSurrogate::fit(const EvidenceSet& evidence, RngStream& rng) {
  if (evidence.size() < 2)
    throw InsufficientDataError("gp: need at least 2 evidence points");
  std_x_ = evidence.parameter_standardizer();
  std_y_ = evidence.discrepancy_standardizer();
  bounds_ = evidence.bounds();
  x_ = std_x_.transform(evidence.parameters());
  y_ = std_y_.transform(evidence.discrepancies());

  const Eigen::Index d = x_.cols();
  priors_.lengthscale_mean.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double range = x_.col(j).maxCoeff() - x_.col(j).minCoeff();
    priors_.lengthscale_mean[j] = std::max(0.1 * range, 1e-3);
  }
  priors_.kernel_variance_mean = 1.0;
  priors_.bias_variance_mean = 1.0;
  priors_.noise_variance_mean = 0.1;

  const opt::ObjectiveFn objective = [this](const Eigen::VectorXd& phi,
                                            Eigen::VectorXd* grad) {
    const GpHyperparams h = unpack_log(phi);
    Eigen::VectorXd g_lml;
    Eigen::VectorXd g_prior;
    const double lml =
        gp_log_marginal(x_, y_, h, grad != nullptr ? &g_lml : nullptr);
    const double lp = log_prior(h, priors_, grad != nullptr ? &g_prior : nullptr);
    if (grad != nullptr) *grad = -(g_lml + g_prior);
    return -(lml + lp);
  };

  Eigen::VectorXd lo(d + 3);
  Eigen::VectorXd hi(d + 3);
  lo.head(d).setConstant(std::log(1e-3));
  hi.head(d).setConstant(std::log(1e3));
  lo[d] = std::log(1e-6);
  hi[d] = std::log(1e4);
  lo[d + 1] = std::log(1e-8);
  hi[d + 1] = std::log(1e4);
  lo[d + 2] = std::log(1e-8);
  hi[d + 2] = std::log(1e2);
  const Bounds box(lo, hi);

  GpHyperparams init;
  init.lengthscales = priors_.lengthscale_mean;
  init.kernel_variance = priors_.kernel_variance_mean;
  init.bias_variance = priors_.bias_variance_mean;
  init.noise_variance = priors_.noise_variance_mean;
  initial_objective_ = -objective(pack_log(init), nullptr);

  opt::LbfgsOptions local;
  local.max_evals = config_.max_evals;

  double best_f = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_phi = pack_log(init);
  for (int r = 0; r < config_.restarts; ++r) {
    Eigen::VectorXd start;
    if (r == 0) {
      start = pack_log(init);
    } else {
      GpHyperparams draw;
      draw.lengthscales.resize(d);
      for (Eigen::Index j = 0; j < d; ++j)
        draw.lengthscales[j] = rng.gamma(1.0, priors_.lengthscale_mean[j]);
      draw.kernel_variance = rng.gamma(1.0, priors_.kernel_variance_mean);
      draw.bias_variance = rng.gamma(1.0, priors_.bias_variance_mean);
      draw.noise_variance = rng.gamma(1.0, priors_.noise_variance_mean);
      start = pack_log(draw);
    }
    try {
      const auto res = opt::minimize_box_lbfgs(objective, start, box, local);
      if (res.f < best_f) {
        best_f = res.f;
        best_phi = res.x;
      }
    } catch (const NumericalFailureError&) {
      // restart skipped; at least the prior-mean start is well-conditioned
    }
  }
  hypers_ = unpack_log(best_phi);
  fitted_ = true;
  rebuild_cache(evidence);
}

void GpSurrogate::refresh(const EvidenceSet& evidence, RngStream&) {
  if (!fitted_) throw StateError("gp: refresh before fit");
  rebuild_cache(evidence);
}

void GpSurrogate::fit_fixed(const EvidenceSet& evidence,
                            const GpHyperparams& hypers) {
  if (evidence.size() < 2)
    throw InsufficientDataError("gp: need at least 2 evidence points");
  if (hypers.kernel_variance <= 0.0 || hypers.bias_variance <= 0.0 ||
      hypers.noise_variance <= 0.0 ||
      (hypers.lengthscales.array() <= 0.0).any())
    throw InvalidHyperparameterError("gp: hyperparameters must be positive");
  std_x_ = evidence.parameter_standardizer();
  std_y_ = evidence.discrepancy_standardizer();
  bounds_ = evidence.bounds();
  hypers_ = hypers;
  priors_.lengthscale_mean =
      Eigen::VectorXd::Constant(hypers.lengthscales.size(), 1.0);
  fitted_ = true;
  rebuild_cache(evidence);
}

void GpSurrogate::rebuild_cache(const EvidenceSet& evidence) {
  x_ = std_x_.transform(evidence.parameters());
  y_ = std_y_.transform(evidence.discrepancies());
  Eigen::MatrixXd k =
      rbf_kernel_matrix(x_, hypers_.lengthscales, hypers_.kernel_variance);
  k.array() += hypers_.bias_variance;
  k.diagonal().array() += hypers_.noise_variance;
  const auto llt = cholesky_with_jitter(k);
  chol_l_ = llt.matrixL();
  alpha_ = llt.solve(y_);
}

PredictiveMoments GpSurrogate::predict_moments(
    const Eigen::VectorXd& theta) const {
  if (!fitted_) throw StateError("gp: predict before fit");
  if (!bounds_.contains(theta))
    throw DomainError("gp: prediction point outside bounds");
  const Eigen::VectorXd xs = std_x_.transform_point(theta);
  Eigen::VectorXd kstar =
      rbf_kernel_matrix(x_, xs.transpose(), hypers_.lengthscales,
                        hypers_.kernel_variance)
          .col(0);
  kstar.array() += hypers_.bias_variance;
  const double mean_std = kstar.dot(alpha_);
  const Eigen::VectorXd v =
      chol_l_.triangularView<Eigen::Lower>().solve(kstar);
  const double var_std = std::max(
      hypers_.kernel_variance + hypers_.bias_variance - v.squaredNorm(), 0.0);
  PredictiveMoments out;
  out.mean = std_y_.inverse_scalar(mean_std);
  out.variance = var_std * std_y_.scale()[0] * std_y_.scale()[0];
  return out;
}

double GpSurrogate::noise_variance() const {
  if (!fitted_) throw StateError("gp: not fitted");
  return hypers_.noise_variance * std_y_.scale()[0] * std_y_.scale()[0];
}

std::vector<double> GpSurrogate::predict_samples(const Eigen::VectorXd& theta,
                                                 int p, RngStream& rng) const {
  const PredictiveMoments m = predict_moments(theta);
  const double sd = std::sqrt(m.variance + noise_variance());
  std::vector<double> out(static_cast<std::size_t>(p));
  for (double& v : out) v = rng.normal(m.mean, sd);
  return out;
}

namespace {

class GpSurface final : public PredictiveSurface {
 public:
  GpSurface(const GpSurrogate& gp, int p) : gp_(gp), count_(std::max(p, 1)) {}

  QuantileMoments moments(const Eigen::VectorXd& theta,
                          double /*eps_q*/) const override {
    const PredictiveMoments m = gp_.predict_moments(theta);
    return QuantileMoments{m.mean, m.variance, count_};
  }

 private:
  const GpSurrogate& gp_;
  int count_;
};

}  // namespace

std::unique_ptr<PredictiveSurface> GpSurrogate::make_surface(
    int p, RngStream&) const {
  if (!fitted_) throw StateError("gp: surface before fit");
  return std::make_unique<GpSurface>(*this, p);
}

nlohmann::json GpSurrogate::to_json() const {
  if (!fitted_) throw StateError("gp: serialize before fit");
  nlohmann::json j;
  j["kind"] = "gp";
  j["lengthscales"] = std::vector<double>(
      hypers_.lengthscales.data(),
      hypers_.lengthscales.data() + hypers_.lengthscales.size());
  j["kernel_variance"] = hypers_.kernel_variance;
  j["bias_variance"] = hypers_.bias_variance;
  j["noise_variance"] = hypers_.noise_variance;
  j["x_mean"] = std::vector<double>(std_x_.mean().data(),
                                    std_x_.mean().data() + std_x_.dim());
  j["x_scale"] = std::vector<double>(std_x_.scale().data(),
                                     std_x_.scale().data() + std_x_.dim());
  j["y_mean"] = std_y_.mean()[0];
  j["y_scale"] = std_y_.scale()[0];
  return j;
}

GpSurrogate GpSurrogate::from_json(const nlohmann::json& j,
                                   const EvidenceSet& evidence) {
  GpSurrogate gp;
  const auto ls = j.at("lengthscales").get<std::vector<double>>();
  gp.hypers_.lengthscales =
      Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size());
  gp.hypers_.kernel_variance = j.at("kernel_variance").get<double>();
  gp.hypers_.bias_variance = j.at("bias_variance").get<double>();
  gp.hypers_.noise_variance = j.at("noise_variance").get<double>();
  const auto xm = j.at("x_mean").get<std::vector<double>>();
  const auto xs = j.at("x_scale").get<std::vector<double>>();
  const auto remap = [](const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).eval();
  };
  gp.std_x_ = Standardizer::from_moments(remap(xm), remap(xs));
  gp.std_y_ = Standardizer::from_moments(
      Eigen::VectorXd::Constant(1, j.at("y_mean").get<double>()),
      Eigen::VectorXd::Constant(1, j.at("y_scale").get<double>()));
  gp.bounds_ = evidence.bounds();
  gp.priors_.lengthscale_mean =
      Eigen::VectorXd::Ones(gp.hypers_.lengthscales.size());
  gp.fitted_ = true;
  gp.rebuild_cache(evidence);
  return gp;
}

double lcb_acquisition(const GpSurrogate& gp, const Eigen::VectorXd& theta,
                       double eta_sq) {
  if (!(eta_sq >= 0.0))
    throw DomainError("lcb: eta_sq must be non-negative");
  const PredictiveMoments m = gp.predict_moments(theta);
  return m.mean - std::sqrt(eta_sq * std::max(m.variance, 0.0));
}

}  // namespace lfi
