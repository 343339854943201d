#include "lfi/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>

#include "lfi/errors.hpp"
#include "lfi/kernels.hpp"

namespace lfi {

namespace {

constexpr double kVarianceFloor = 1e-10;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix tile(const Matrix& m, int copies) {
  Matrix out(m.rows() * copies, m.cols());
  for (int c = 0; c < copies; ++c) out.middleRows(c * m.rows(), m.rows()) = m;
  return out;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = rng.normal();
  return out;
}

void validate_layer(const SvgpLayer& layer) {
  const Eigen::Index m = layer.z.rows();
  if (m < 1) throw InvalidHyperparameterError("layer needs inducing points");
  if (layer.q_mu.rows() != m)
    throw ShapeError("variational mean row count differs from inducing count");
  if (static_cast<Eigen::Index>(layer.q_tril.size()) != layer.q_mu.cols())
    throw ShapeError("one covariance factor per output dimension required");
  for (const auto& t : layer.q_tril)
    if (t.rows() != m || t.cols() != m)
      throw ShapeError("covariance factor is not inducing x inducing");
  if (layer.log_lengthscales.size() != layer.z.cols())
    throw ShapeError("one lengthscale per input dimension required");
  if (layer.identity_mean && layer.z.cols() != layer.q_mu.cols())
    throw ShapeError("identity mean needs matching input and output widths");
}

Vector lengthscales_of(const SvgpLayer& layer) {
  return layer.log_lengthscales.array().exp();
}

Matrix mean_function(const SvgpLayer& layer, const Matrix& x) {
  if (layer.identity_mean) return x;
  return Matrix::Zero(x.rows(), layer.output_dim());
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array() ||
      j.front().empty())
    throw ConfigError("malformed matrix field in checkpoint");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw ConfigError("ragged matrix field in checkpoint");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(j.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace

Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& points, int k,
                               RngStream& rng, int iterations) {
  const Eigen::Index n = points.rows();
  if (n < 1) throw InsufficientDataError("clustering needs at least one point");
  if (k < 1) throw ConfigError("clustering needs at least one center");
  const Eigen::Index m = std::min<Eigen::Index>(k, n);

  Matrix centers(m, points.cols());
  centers.row(0) = points.row(rng.uniform_int(static_cast<int>(n)));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i)
    d2[i] = (points.row(i) - centers.row(0)).squaredNorm();

  for (Eigen::Index c = 1; c < m; ++c) {
    const double total = d2.sum();
    Eigen::Index pick;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (u <= acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(static_cast<int>(n));
    }
    centers.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (points.row(i) - centers.row(c)).squaredNorm());
  }

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = (points.row(i) - centers.row(0)).squaredNorm();
      for (Eigen::Index c = 1; c < m; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(m, points.cols());
    Vector counts = Vector::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (Eigen::Index c = 0; c < m; ++c)
      if (counts[c] > 0.0) centers.row(c) = sums.row(c) / counts[c];
  }
  return centers;
}

SvgpPosteriorCache svgp_build_cache(const SvgpLayer& layer) {
  validate_layer(layer);
  Matrix kmm = rbf_kernel_matrix(layer.z, lengthscales_of(layer), 1.0);
  kmm.diagonal().array() += kLayerJitter;
  Eigen::LLT<Matrix> llt(kmm);
  if (llt.info() != Eigen::Success)
    throw NumericalFailureError("inducing-point factorization failed");
  SvgpPosteriorCache cache;
  cache.chol = llt.matrixL();
  const Matrix delta = layer.q_mu - mean_function(layer, layer.z);
  cache.mean_solve =
      cache.chol.triangularView<Eigen::Lower>().solve(delta);
  cache.cov_solve.reserve(layer.q_tril.size());
  for (const auto& t : layer.q_tril)
    cache.cov_solve.push_back(
        cache.chol.triangularView<Eigen::Lower>().solve(t));
  return cache;
}

namespace {

// Shared marginal-moment computation against a prepared cache.
LayerMoments layer_moments_cached(const SvgpLayer& layer,
                                  const SvgpPosteriorCache& cache,
                                  const Matrix& x) {
  if (x.cols() != layer.input_dim())
    throw ShapeError("layer input width mismatch");
  const Matrix kmn =
      rbf_kernel_matrix(layer.z, x, lengthscales_of(layer), 1.0);
  const Matrix b = cache.chol.triangularView<Eigen::Lower>().solve(kmn);
  LayerMoments out;
  out.mean = b.transpose() * cache.mean_solve + mean_function(layer, x);
  const Eigen::VectorXd prior_red =
      b.array().square().colwise().sum().transpose();
  out.variance.resize(x.rows(), layer.output_dim());
  for (Eigen::Index o = 0; o < layer.output_dim(); ++o) {
    const Matrix c = cache.cov_solve[static_cast<std::size_t>(o)].transpose() * b;
    out.variance.col(o) =
        (1.0 - prior_red.array() + c.array().square().colwise().sum().transpose())
            .matrix();
  }
  out.variance = out.variance.cwiseMax(0.0);
  return out;
}

}  // namespace

LayerMoments svgp_layer_moments(const SvgpLayer& layer, const Matrix& x) {
  return layer_moments_cached(layer, svgp_build_cache(layer), x);
}

Eigen::MatrixXd svgp_layer_sample(const SvgpLayer& layer, const Matrix& x,
                                  const Matrix& zeta) {
  const LayerMoments m = svgp_layer_moments(layer, x);
  if (zeta.rows() != m.mean.rows() || zeta.cols() != m.mean.cols())
    throw ShapeError("sampling noise shape mismatch");
  return m.mean.array() +
         m.variance.cwiseMax(kVarianceFloor).array().sqrt() * zeta.array();
}

double svgp_layer_kl(const SvgpLayer& layer) {
  const SvgpPosteriorCache cache = svgp_build_cache(layer);
  const Eigen::Index m = layer.inducing();
  const Eigen::Index o = layer.output_dim();
  const double quad = cache.mean_solve.squaredNorm();
  const double logdet_k =
      2.0 * cache.chol.diagonal().array().log().sum();
  double tr = 0.0;
  double logdet_s = 0.0;
  for (Eigen::Index d = 0; d < o; ++d) {
    tr += cache.cov_solve[static_cast<std::size_t>(d)].squaredNorm();
    logdet_s += layer.q_tril[static_cast<std::size_t>(d)]
                    .diagonal()
                    .array()
                    .square()
                    .log()
                    .sum();
  }
  return 0.5 * (tr + quad - static_cast<double>(m * o) +
                static_cast<double>(o) * logdet_k - logdet_s);
}

Eigen::MatrixXd svgp_propagate(const std::vector<SvgpLayer>& layers,
                               const std::vector<SvgpPosteriorCache>& caches,
                               const Matrix& x0,
                               const std::vector<Matrix>& zeta) {
  if (layers.size() != caches.size() || layers.size() != zeta.size())
    throw ShapeError("layer, cache, and noise counts differ");
  Matrix h = x0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerMoments m = layer_moments_cached(layers[l], caches[l], h);
    if (zeta[l].rows() != m.mean.rows() || zeta[l].cols() != m.mean.cols())
      throw ShapeError("propagation noise shape mismatch");
    h = m.mean.array() +
        m.variance.cwiseMax(kVarianceFloor).array().sqrt() * zeta[l].array();
  }
  return h;
}

namespace {

class DgpSurface final : public PredictiveSurface {
 public:
  DgpSurface(std::vector<SvgpLayer> layers,
             std::vector<SvgpPosteriorCache> caches, Standardizer std_x,
             Standardizer std_y, Bounds bounds, Vector w,
             std::vector<Matrix> zeta)
      : layers_(std::move(layers)),
        caches_(std::move(caches)),
        std_x_(std::move(std_x)),
        std_y_(std::move(std_y)),
        bounds_(std::move(bounds)),
        w_(std::move(w)),
        zeta_(std::move(zeta)) {}

  QuantileMoments moments(const Eigen::VectorXd& theta,
                          double eps_q) const override {
    if (!bounds_.contains(theta))
      throw DomainError("prediction outside the parameter bounds");
    const Vector xs = std_x_.transform_point(theta);
    const Eigen::Index p = w_.size();
    Matrix x0(p, xs.size() + 1);
    x0.leftCols(xs.size()).rowwise() = xs.transpose();
    x0.col(xs.size()) = w_;
    const Matrix h = svgp_propagate(layers_, caches_, x0, zeta_);
    std::vector<double> raw(static_cast<std::size_t>(p));
    for (Eigen::Index i = 0; i < p; ++i)
      raw[static_cast<std::size_t>(i)] = std_y_.inverse_scalar(h(i, 0));
    return quantile_moments(raw, eps_q);
  }

 private:
  std::vector<SvgpLayer> layers_;
  std::vector<SvgpPosteriorCache> caches_;
  Standardizer std_x_;
  Standardizer std_y_;
  Bounds bounds_;
  Vector w_;
  std::vector<Matrix> zeta_;
};

}  // namespace

struct DgpSurrogate::GraphRefs {
  int elbo = -1;
  std::vector<int> z;
  std::vector<int> qmu;
  std::vector<int> logell;
  std::vector<std::vector<int>> tril;
  int final_s = -1;
  int a = -1;
  int logb = -1;
  int logsig2 = -1;
};

DgpSurrogate::DgpSurrogate(DgpConfig config) : config_(config) {
  if (config_.gp_layers < 1 || config_.gp_layers > 5)
    throw ConfigError("between one and five GP layers supported");
  if (config_.inducing < 1) throw ConfigError("need at least one inducing point");
  if (config_.iw_samples < 1)
    throw ConfigError("need at least one importance-weighted sample");
  if (config_.predict_draws < 1)
    throw ConfigError("need at least one prediction draw");
  if (config_.init_steps < 0 || config_.refresh_steps < 0)
    throw ConfigError("step counts cannot be negative");
  if (config_.natgrad_step <= 0.0 || config_.adam_step <= 0.0)
    throw ConfigError("optimizer steps must be positive");
  if (config_.sigma2_init <= 0.0)
    throw InvalidHyperparameterError("likelihood variance must be positive");
  adam_ = opt::Adam(config_.adam_step);
  kind_ = config_.gp_layers == 1
              ? "lv-gp"
              : "lv-" + std::to_string(config_.gp_layers) + "gp";
}

std::string_view DgpSurrogate::kind() const { return kind_; }

void DgpSurrogate::init_model(RngStream& rng) {
  const Eigen::Index n = x_.rows();
  const Eigen::Index d_in = x_.cols() + 1;
  Matrix aug(n, d_in);
  aug.leftCols(x_.cols()) = x_;
  aug.col(x_.cols()).setZero();
  const int m = static_cast<int>(std::min<Eigen::Index>(config_.inducing, n));
  const Matrix z0 = kmeans_centers(aug, m, rng);

  layers_.clear();
  for (int l = 0; l < config_.gp_layers; ++l) {
    const bool final_layer = l == config_.gp_layers - 1;
    SvgpLayer layer;
    layer.z = z0;
    layer.identity_mean = !final_layer;
    layer.log_lengthscales = Vector::Constant(
        d_in, 0.5 * std::log(static_cast<double>(d_in)));
    const Eigen::Index d_out = final_layer ? 1 : d_in;
    // Inner layers start as a near-deterministic skip connection; the final
    // layer starts at its prior so the initial divergence term vanishes and
    // the first natural-gradient steps stay tame.
    if (final_layer) {
      layer.q_mu = Matrix::Zero(z0.rows(), 1);
      Matrix kmm = rbf_kernel_matrix(z0, lengthscales_of(layer), 1.0);
      kmm.diagonal().array() += kLayerJitter;
      Eigen::LLT<Matrix> llt(kmm);
      if (llt.info() != Eigen::Success)
        throw NumericalFailureError("inducing-point factorization failed");
      layer.q_tril.assign(1, Matrix(llt.matrixL()));
    } else {
      layer.q_mu = z0;
      layer.q_tril.assign(static_cast<std::size_t>(d_out),
                          1e-5 * Matrix::Identity(z0.rows(), z0.rows()));
    }
    layers_.push_back(std::move(layer));
  }
  a_ = Vector::Zero(n);
  log_b_ = Vector::Zero(n);
  log_sigma2_ = std::log(config_.sigma2_init);
}

void DgpSurrogate::fit(const EvidenceSet& evidence, RngStream& rng) {
  if (evidence.size() < 2)
    throw InsufficientDataError("need at least two points to fit");
  std_x_ = evidence.parameter_standardizer();
  std_y_ = evidence.discrepancy_standardizer();
  bounds_ = evidence.bounds();
  x_ = std_x_.transform(evidence.parameters());
  y_ = std_y_.transform(evidence.discrepancies());
  init_model(rng);
  adam_.reset();
  trace_.clear();
  train_steps(config_.init_steps, rng);
  rebuild_caches();
  fitted_ = true;
}

void DgpSurrogate::refresh(const EvidenceSet& evidence, RngStream& rng) {
  require_fitted();
  const Eigen::Index old_n = a_.size();
  if (evidence.size() < old_n)
    throw StateError("evidence set shrank between updates");
  x_ = std_x_.transform(evidence.parameters());
  y_ = std_y_.transform(evidence.discrepancies());
  if (evidence.size() > old_n) {
    Vector a = Vector::Zero(evidence.size());
    Vector b = Vector::Zero(evidence.size());
    a.head(old_n) = a_;
    b.head(old_n) = log_b_;
    a_ = std::move(a);
    log_b_ = std::move(b);
    adam_.pad_rows(adam_dim());
  }
  train_steps(config_.refresh_steps, rng);
  rebuild_caches();
}

DgpNoise DgpSurrogate::draw_noise(RngStream& rng) const {
  if (layers_.empty()) throw StateError("model not initialized");
  const Eigen::Index big_n = x_.rows() * config_.iw_samples;
  DgpNoise noise;
  noise.w_zeta = normal_matrix(big_n, 1, rng);
  noise.layer_zeta.reserve(layers_.size());
  for (const auto& layer : layers_)
    noise.layer_zeta.push_back(normal_matrix(big_n, layer.output_dim(), rng));
  return noise;
}

DgpSurrogate::GraphRefs DgpSurrogate::build_graph(ad::Tape& t,
                                                  const DgpNoise& noise,
                                                  bool natural_final) const {
  const Eigen::Index n = x_.rows();
  const int k = config_.iw_samples;
  const Eigen::Index big_n = n * k;
  if (noise.w_zeta.rows() != big_n || noise.w_zeta.cols() != 1)
    throw ShapeError("latent noise shape mismatch");
  if (noise.layer_zeta.size() != layers_.size())
    throw ShapeError("one noise block per layer required");

  GraphRefs refs;
  const int theta_c = t.constant(tile(x_, k));
  const int delta_c = t.constant(tile(y_, k));
  const int wz_c = t.constant(noise.w_zeta);

  refs.a = t.parameter(a_);
  refs.logb = t.parameter(log_b_);
  Matrix ls2(1, 1);
  ls2(0, 0) = log_sigma2_;
  refs.logsig2 = t.parameter(std::move(ls2));

  // w = a + sqrt(b) zeta, with log p(w) - log q(w) = -w^2/2 + zeta^2/2
  // + log(b)/2 entering the importance weight.
  const int a_t = t.tile_rows(refs.a, k);
  const int sb_t = t.tile_rows(t.exp(t.scale(refs.logb, 0.5)), k);
  const int w = t.add(a_t, t.mul(sb_t, wz_c));
  const int half_z2 =
      t.constant((0.5 * noise.w_zeta.array().square()).matrix());
  const int lpq =
      t.add(t.add(t.scale(t.square(w), -0.5), half_z2),
            t.scale(t.tile_rows(refs.logb, k), 0.5));

  int h = t.concat_cols(theta_c, w);
  int kl_total = -1;

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const SvgpLayer& layer = layers_[l];
    const bool natural = natural_final && l + 1 == layers_.size();
    const Eigen::Index m = layer.inducing();
    const Eigen::Index d_out = layer.output_dim();
    const Matrix& zeta = noise.layer_zeta[l];
    if (zeta.rows() != big_n || zeta.cols() != d_out)
      throw ShapeError("layer noise shape mismatch");
    if (natural && d_out != 1)
      throw ShapeError("natural updates expect a scalar final layer");

    const int z_p = t.parameter(layer.z);
    const int logell_p = t.parameter(layer.log_lengthscales.transpose());
    refs.z.push_back(z_p);
    refs.logell.push_back(logell_p);

    const int inv_ell = t.exp(t.neg(logell_p));
    const int zs = t.mul(z_p, inv_ell);
    const int xs = t.mul(h, inv_ell);
    const int rz = t.rowsum(t.square(zs));
    const int rx = t.rowsum(t.square(xs));
    const int dzz = t.add(
        t.add(t.scale(t.matmul(zs, t.transpose(zs)), -2.0), rz),
        t.transpose(rz));
    const int kmm =
        t.add(t.exp(t.scale(dzz, -0.5)),
              t.constant(kLayerJitter *
                         Matrix::Identity(m, m)));
    const int dzx = t.add(
        t.add(t.scale(t.matmul(zs, t.transpose(xs)), -2.0), rz),
        t.transpose(rx));
    const int kmn = t.exp(t.scale(dzx, -0.5));
    const int chol = t.cholesky(kmm);
    const int b = t.solve_lower(chol, kmn);
    const int aa = t.solve_lower_t(chol, b);

    const int qmu_p = t.parameter(layer.q_mu);
    refs.qmu.push_back(qmu_p);
    const int du = layer.identity_mean ? t.sub(qmu_p, z_p) : qmu_p;
    int fmean = t.matmul(t.transpose(aa), du);
    if (layer.identity_mean) fmean = t.add(fmean, h);
    const int prior_red = t.transpose(t.colsum(t.square(b)));

    std::vector<int> factors;
    std::vector<int> tril_ids;
    if (natural) {
      const Matrix s = layer.q_tril[0] * layer.q_tril[0].transpose();
      refs.final_s = t.parameter(s);
      factors.push_back(t.cholesky(refs.final_s));
    } else {
      for (const auto& tri : layer.q_tril) {
        const int tp = t.parameter(tri);
        tril_ids.push_back(tp);
        factors.push_back(t.tril(tp));
      }
    }
    refs.tril.push_back(std::move(tril_ids));

    int t_cols = -1;
    int tr_sum = -1;
    int logdet_s = -1;
    for (std::size_t o = 0; o < factors.size(); ++o) {
      const int co = t.matmul(t.transpose(factors[o]), aa);
      const int to = t.transpose(t.colsum(t.square(co)));
      t_cols = o == 0 ? to : t.concat_cols(t_cols, to);
      const int tro = t.sum(t.square(t.solve_lower(chol, factors[o])));
      tr_sum = o == 0 ? tro : t.add(tr_sum, tro);
      const int lds = t.sum(t.log(t.square(t.diag_part(factors[o]))));
      logdet_s = o == 0 ? lds : t.add(logdet_s, lds);
    }

    const int base = t.add_scalar(t.neg(prior_red), 1.0);
    const int var = t.clamp_min(t.add(base, t_cols), kVarianceFloor);
    h = t.add(fmean, t.mul(t.sqrt(var), t.constant(zeta)));

    const int quad = t.sum(t.square(t.solve_lower(chol, du)));
    const int logdet_k = t.sum(t.log(t.square(t.diag_part(chol))));
    const int kl = t.scale(
        t.add_scalar(
            t.add(t.add(tr_sum, quad),
                  t.sub(t.scale(logdet_k, static_cast<double>(d_out)),
                        logdet_s)),
            -static_cast<double>(m * d_out)),
        0.5);
    kl_total = l == 0 ? kl : t.add(kl_total, kl);
  }

  const int sig2 = t.exp(refs.logsig2);
  const int resid2 = t.square(t.sub(delta_c, h));
  const int ll = t.add(
      t.scale(t.log(t.scale(sig2, 2.0 * std::numbers::pi)), -0.5),
      t.scale(t.div(resid2, sig2), -0.5));
  const int summand = t.add(ll, lpq);
  const int stacked = t.reshape(summand, n, k);
  const int lme = t.add_scalar(t.logsumexp_rows(stacked),
                               -std::log(static_cast<double>(k)));
  refs.elbo = t.sub(t.sum(lme), kl_total);
  return refs;
}

namespace {

void natural_step(SvgpLayer& layer, const Matrix& g_m, const Matrix& g_s,
                  double step) {
  const Eigen::Index m = layer.inducing();
  const Matrix eye = Matrix::Identity(m, m);
  const Matrix l_inv =
      layer.q_tril[0].triangularView<Eigen::Lower>().solve(eye);
  const Matrix s_inv = l_inv.transpose() * l_inv;
  const Matrix th1 = s_inv * layer.q_mu;
  const Matrix th2 = -0.5 * s_inv;
  const Matrix nat1 = g_m - 2.0 * g_s * layer.q_mu;

  const Matrix s_old = layer.q_tril[0] * layer.q_tril[0].transpose();
  double gamma = step;
  for (int tries = 0; tries < 60; ++tries, gamma *= 0.5) {
    const Matrix t1 = th1 + gamma * nat1;
    Matrix prec = -2.0 * (th2 + gamma * g_s);
    prec = 0.5 * (prec + prec.transpose());
    Eigen::LLT<Matrix> llt_prec(prec);
    if (llt_prec.info() != Eigen::Success) continue;
    Matrix s_new = llt_prec.solve(eye);
    s_new = 0.5 * (s_new + s_new.transpose());
    Eigen::LLT<Matrix> llt_s(s_new);
    if (llt_s.info() != Eigen::Success) continue;
    const Matrix mu_new = s_new * t1;
    // Trust region: with an ill-conditioned prior the mapped-back update can
    // blow up long before positive definiteness fails, so cap each move.
    const double mu_move = (mu_new - layer.q_mu).cwiseAbs().maxCoeff();
    const double s_move = (s_new - s_old).cwiseAbs().maxCoeff();
    if (!std::isfinite(mu_move) || !std::isfinite(s_move)) continue;
    if (mu_move > 1.0 + layer.q_mu.cwiseAbs().maxCoeff()) continue;
    if (s_move > 1.0 + s_old.cwiseAbs().maxCoeff()) continue;
    layer.q_mu = mu_new;
    layer.q_tril[0] = llt_s.matrixL();
    return;
  }
  throw NumericalFailureError(
      "variational covariance left the positive-definite cone");
}

}  // namespace

Eigen::Index DgpSurrogate::adam_dim() const {
  Eigen::Index dim = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const SvgpLayer& layer = layers_[l];
    dim += layer.z.size() + layer.log_lengthscales.size();
    if (l + 1 != layers_.size()) {
      dim += layer.q_mu.size();
      for (const auto& tri : layer.q_tril) dim += tri.size();
    }
  }
  dim += 1;             // log sigma^2
  dim += 2 * a_.size();  // (a_i, log b_i) pairs
  return dim;
}

Eigen::VectorXd DgpSurrogate::collect_adam_gradients(
    const ad::Tape& tape, const GraphRefs& refs) const {
  Vector grad(adam_dim());
  Eigen::Index at = 0;
  const auto put = [&](const Matrix& g) {
    grad.segment(at, g.size()) =
        Eigen::Map<const Vector>(g.data(), g.size());
    at += g.size();
  };
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    put(tape.adjoint(refs.z[l]));
    if (l + 1 != layers_.size()) {
      put(tape.adjoint(refs.qmu[l]));
      for (int id : refs.tril[l]) put(tape.adjoint(id));
    }
    put(tape.adjoint(refs.logell[l]));
  }
  put(tape.adjoint(refs.logsig2));
  const Matrix ga = tape.adjoint(refs.a);
  const Matrix gb = tape.adjoint(refs.logb);
  for (Eigen::Index i = 0; i < a_.size(); ++i) {
    grad[at++] = ga(i, 0);
    grad[at++] = gb(i, 0);
  }
  return grad;
}

void DgpSurrogate::apply_adam_step(const Eigen::VectorXd& step) {
  Eigen::Index at = 0;
  const auto take = [&](Matrix& p) {
    p += Eigen::Map<const Matrix>(step.data() + at, p.rows(), p.cols());
    at += p.size();
  };
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    SvgpLayer& layer = layers_[l];
    take(layer.z);
    if (l + 1 != layers_.size()) {
      take(layer.q_mu);
      for (auto& tri : layer.q_tril) take(tri);
    }
    Matrix ell = layer.log_lengthscales.transpose();
    take(ell);
    layer.log_lengthscales = ell.transpose();
  }
  log_sigma2_ += step[at++];
  for (Eigen::Index i = 0; i < a_.size(); ++i) {
    a_[i] += step[at++];
    log_b_[i] += step[at++];
  }
}

void DgpSurrogate::train_steps(int steps, RngStream& rng) {
  for (int s = 0; s < steps; ++s) {
    const DgpNoise noise = draw_noise(rng);
    ad::Tape tape;
    const GraphRefs refs = build_graph(tape, noise, true);
    const double bound = tape.value(refs.elbo)(0, 0);
    if (!std::isfinite(bound)) {
      std::ostringstream snapshot;
      snapshot << "training bound became non-finite at step " << trace_.size()
               << ": sigma2 " << sigma2() << ", last bound "
               << (trace_.empty() ? 0.0 : trace_.back());
      throw NumericalFailureError(snapshot.str());
    }
    trace_.push_back(bound);
    tape.backward(refs.elbo);

    Matrix g_s = tape.adjoint(refs.final_s);
    g_s = 0.5 * (g_s + g_s.transpose());
    natural_step(layers_.back(), tape.adjoint(refs.qmu.back()), g_s,
                 config_.natgrad_step);
    apply_adam_step(adam_.update(collect_adam_gradients(tape, refs)));
  }
}

double DgpSurrogate::bound_with_noise(const DgpNoise& noise,
                                      Eigen::VectorXd* grad) const {
  if (layers_.empty()) throw StateError("model not initialized");
  ad::Tape tape;
  const GraphRefs refs = build_graph(tape, noise, false);
  const double value = tape.value(refs.elbo)(0, 0);
  if (grad != nullptr) {
    tape.backward(refs.elbo);
    Vector g(pack_params().size());
    Eigen::Index at = 0;
    const auto put = [&](const Matrix& m) {
      g.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      at += m.size();
    };
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      put(tape.adjoint(refs.z[l]));
      put(tape.adjoint(refs.qmu[l]));
      for (int id : refs.tril[l]) put(tape.adjoint(id));
      put(tape.adjoint(refs.logell[l]));
    }
    put(tape.adjoint(refs.logsig2));
    const Matrix ga = tape.adjoint(refs.a);
    const Matrix gb = tape.adjoint(refs.logb);
    for (Eigen::Index i = 0; i < a_.size(); ++i) {
      g[at++] = ga(i, 0);
      g[at++] = gb(i, 0);
    }
    *grad = std::move(g);
  }
  return value;
}

double DgpSurrogate::bound_with_noise_natural(const DgpNoise& noise,
                                              Eigen::MatrixXd* grad_mean,
                                              Eigen::MatrixXd* grad_cov) const {
  if (layers_.empty()) throw StateError("model not initialized");
  ad::Tape tape;
  const GraphRefs refs = build_graph(tape, noise, true);
  const double value = tape.value(refs.elbo)(0, 0);
  if (grad_mean != nullptr || grad_cov != nullptr) {
    tape.backward(refs.elbo);
    if (grad_mean != nullptr) *grad_mean = tape.adjoint(refs.qmu.back());
    if (grad_cov != nullptr) {
      const Matrix g = tape.adjoint(refs.final_s);
      *grad_cov = 0.5 * (g + g.transpose());
    }
  }
  return value;
}

Eigen::VectorXd DgpSurrogate::pack_params() const {
  Eigen::Index dim = 0;
  for (const auto& layer : layers_) {
    dim += layer.z.size() + layer.q_mu.size() + layer.log_lengthscales.size();
    for (const auto& tri : layer.q_tril) dim += tri.size();
  }
  dim += 1 + 2 * a_.size();
  Vector packed(dim);
  Eigen::Index at = 0;
  const auto put = [&](const Matrix& m) {
    packed.segment(at, m.size()) =
        Eigen::Map<const Vector>(m.data(), m.size());
    at += m.size();
  };
  for (const auto& layer : layers_) {
    put(layer.z);
    put(layer.q_mu);
    for (const auto& tri : layer.q_tril) put(tri);
    put(layer.log_lengthscales.transpose());
  }
  packed[at++] = log_sigma2_;
  for (Eigen::Index i = 0; i < a_.size(); ++i) {
    packed[at++] = a_[i];
    packed[at++] = log_b_[i];
  }
  return packed;
}

void DgpSurrogate::unpack_params(const Eigen::VectorXd& packed) {
  if (packed.size() != pack_params().size())
    throw ShapeError("packed parameter length mismatch");
  Eigen::Index at = 0;
  const auto take = [&](Matrix& p) {
    p = Eigen::Map<const Matrix>(packed.data() + at, p.rows(), p.cols());
    at += p.size();
  };
  for (auto& layer : layers_) {
    take(layer.z);
    take(layer.q_mu);
    for (auto& tri : layer.q_tril) take(tri);
    Matrix ell = layer.log_lengthscales.transpose();
    take(ell);
    layer.log_lengthscales = ell.transpose();
  }
  log_sigma2_ = packed[at++];
  for (Eigen::Index i = 0; i < a_.size(); ++i) {
    a_[i] = packed[at++];
    log_b_[i] = packed[at++];
  }
  if (fitted_) rebuild_caches();
}

void DgpSurrogate::rebuild_caches() {
  caches_.clear();
  caches_.reserve(layers_.size());
  for (const auto& layer : layers_) caches_.push_back(svgp_build_cache(layer));
}

void DgpSurrogate::require_fitted() const {
  if (!fitted_) throw StateError("model queried before training");
}

std::vector<double> DgpSurrogate::predict_samples(const Eigen::VectorXd& theta,
                                                  int p,
                                                  RngStream& rng) const {
  require_fitted();
  if (p < 1) throw ConfigError("need at least one prediction draw");
  if (!bounds_.contains(theta))
    throw DomainError("prediction outside the parameter bounds");
  const Vector xs = std_x_.transform_point(theta);
  Matrix x0(p, xs.size() + 1);
  x0.leftCols(xs.size()).rowwise() = xs.transpose();
  for (Eigen::Index i = 0; i < p; ++i) x0(i, xs.size()) = rng.normal();
  std::vector<Matrix> zeta;
  zeta.reserve(layers_.size());
  for (const auto& layer : layers_)
    zeta.push_back(normal_matrix(p, layer.output_dim(), rng));
  const Matrix h = svgp_propagate(layers_, caches_, x0, zeta);
  const double noise_sd = std::sqrt(noise_variance());
  std::vector<double> out(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i)
    out[static_cast<std::size_t>(i)] =
        std_y_.inverse_scalar(h(i, 0)) + rng.normal(0.0, noise_sd);
  return out;
}

double DgpSurrogate::noise_variance() const {
  require_fitted();
  const double s = std_y_.scale()[0];
  return std::exp(log_sigma2_) * s * s;
}

std::unique_ptr<PredictiveSurface> DgpSurrogate::make_surface(
    int p, RngStream& rng) const {
  require_fitted();
  if (p < 1) throw ConfigError("need at least one prediction draw");
  Vector w(p);
  for (Eigen::Index i = 0; i < p; ++i) w[i] = rng.normal();
  std::vector<Matrix> zeta;
  zeta.reserve(layers_.size());
  for (const auto& layer : layers_)
    zeta.push_back(normal_matrix(p, layer.output_dim(), rng));
  return std::make_unique<DgpSurface>(layers_, caches_, std_x_, std_y_,
                                      bounds_, std::move(w), std::move(zeta));
}

nlohmann::json DgpSurrogate::to_json() const {
  require_fitted();
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = kind_;
  j["gp_layers"] = config_.gp_layers;
  j["inducing"] = config_.inducing;
  j["iw_samples"] = config_.iw_samples;
  j["predict_draws"] = config_.predict_draws;
  j["init_steps"] = config_.init_steps;
  j["refresh_steps"] = config_.refresh_steps;
  j["natgrad_step"] = config_.natgrad_step;
  j["adam_step"] = config_.adam_step;
  j["sigma2_init"] = config_.sigma2_init;
  j["log_sigma2"] = log_sigma2_;
  j["a"] = vector_to_json(a_);
  j["log_b"] = vector_to_json(log_b_);
  j["x_mean"] = vector_to_json(std_x_.mean());
  j["x_scale"] = vector_to_json(std_x_.scale());
  j["y_mean"] = std_y_.mean()[0];
  j["y_scale"] = std_y_.scale()[0];
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) {
    nlohmann::json lj;
    lj["z"] = matrix_to_json(layer.z);
    lj["q_mu"] = matrix_to_json(layer.q_mu);
    nlohmann::json trils = nlohmann::json::array();
    for (const auto& tri : layer.q_tril) trils.push_back(matrix_to_json(tri));
    lj["q_tril"] = std::move(trils);
    lj["log_lengthscales"] = vector_to_json(layer.log_lengthscales);
    lj["identity_mean"] = layer.identity_mean;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

DgpSurrogate DgpSurrogate::from_json(const nlohmann::json& j,
                                     const EvidenceSet& evidence) {
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw ConfigError("unsupported checkpoint version");
  DgpConfig config;
  config.gp_layers = j["gp_layers"].get<int>();
  config.inducing = j["inducing"].get<int>();
  config.iw_samples = j["iw_samples"].get<int>();
  config.predict_draws = j["predict_draws"].get<int>();
  config.init_steps = j["init_steps"].get<int>();
  config.refresh_steps = j["refresh_steps"].get<int>();
  config.natgrad_step = j["natgrad_step"].get<double>();
  config.adam_step = j["adam_step"].get<double>();
  config.sigma2_init = j["sigma2_init"].get<double>();
  DgpSurrogate model(config);
  model.log_sigma2_ = j["log_sigma2"].get<double>();
  model.a_ = vector_from_json(j["a"]);
  model.log_b_ = vector_from_json(j["log_b"]);
  if (model.a_.size() != evidence.size())
    throw ConfigError("checkpoint does not match the evidence set");
  model.std_x_ = Standardizer::from_moments(vector_from_json(j["x_mean"]),
                                            vector_from_json(j["x_scale"]));
  model.std_y_ = Standardizer::from_moments(
      Vector::Constant(1, j["y_mean"].get<double>()),
      Vector::Constant(1, j["y_scale"].get<double>()));
  model.bounds_ = evidence.bounds();
  model.x_ = model.std_x_.transform(evidence.parameters());
  model.y_ = model.std_y_.transform(evidence.discrepancies());
  for (const auto& lj : j["layers"]) {
    SvgpLayer layer;
    layer.z = matrix_from_json(lj["z"]);
    layer.q_mu = matrix_from_json(lj["q_mu"]);
    for (const auto& tj : lj["q_tril"])
      layer.q_tril.push_back(matrix_from_json(tj));
    layer.log_lengthscales = vector_from_json(lj["log_lengthscales"]);
    layer.identity_mean = lj["identity_mean"].get<bool>();
    validate_layer(layer);
    model.layers_.push_back(std::move(layer));
  }
  if (static_cast<int>(model.layers_.size()) != config.gp_layers)
    throw ConfigError("checkpoint layer count mismatch");
  model.rebuild_caches();
  model.fitted_ = true;
  return model;
}

}  // namespace lfi
