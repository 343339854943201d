#include "lfi/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "lfi/errors.hpp"
#include "lfi/optim.hpp"

namespace lfi {

namespace {

constexpr int kThresholdFallbackProbes = 10000;
constexpr int kCacheManifestVersion = 1;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void check_box(const Bounds& bounds) {
  if (bounds.dim() < 1)
    throw DomainError("posterior: bounds must have at least one dimension");
  if (!bounds.lower.allFinite() || !bounds.upper.allFinite())
    throw DomainError("posterior: bounds must be finite");
}

void validate(const PosteriorConfig& config) {
  if (!(config.eps_q > 0.0 && config.eps_q <= 1.0))
    throw ConfigError("posterior: eps_q must lie in (0, 1]");
  if (config.predict_draws < 1)
    throw ConfigError("posterior: predict_draws must be >= 1");
}

}  // namespace

double uniform_kernel(double delta, double epsilon) {
  if (!(epsilon > 0.0))
    throw DomainError("abc kernel: tolerance must be positive");
  if (!(delta >= 0.0))
    throw DomainError("abc kernel: discrepancy must be non-negative");
  return delta < epsilon ? 1.0 / epsilon : 0.0;
}

AbcKernel::AbcKernel(double eps) : epsilon(eps) {
  if (!(epsilon > 0.0))
    throw DomainError("abc kernel: tolerance must be positive");
}

double surrogate_threshold(const Surrogate& surrogate, const Bounds& bounds,
                           const AcquisitionConfig& config, RngStream& rng,
                           bool* used_fallback) {
  validate(config);
  check_box(bounds);
  const auto surface = surrogate.make_surface(config.predict_draws, rng);
  opt::ValueFn mean = [&](const Eigen::VectorXd& x) {
    return surface->moments(x, config.eps_q).mu_q;
  };
  opt::MultiStartOptions ms;
  ms.restarts = config.restarts;
  ms.local.memory = config.memory;
  ms.local.max_evals = config.max_evals;
  ms.fallback_probes = kThresholdFallbackProbes;
  const opt::MultiStartResult best = opt::minimize_multistart(
      opt::with_central_differences(std::move(mean), config.fd_step, bounds),
      bounds, ms, rng);
  if (used_fallback != nullptr) *used_fallback = best.used_fallback;
  if (!std::isfinite(best.f))
    throw NumericalFailureError("posterior: threshold is not finite");
  return best.f;
}

double approximate_likelihood(double mu_q, double nu_q, double sigma2,
                              double eps) {
  if (!(nu_q >= 0.0))
    throw DomainError("likelihood: nu_q must be non-negative");
  if (!(sigma2 >= 0.0))
    throw DomainError("likelihood: sigma2 must be non-negative");
  const double var = nu_q + sigma2;
  if (var == 0.0)
    throw DegenerateVarianceError("likelihood: nu_q + sigma2 must be positive");
  return norm_cdf((eps - mu_q) / std::sqrt(var));
}

WeightedPosterior weighted_posterior_samples(const Surrogate& surrogate,
                                             const Bounds& prior, int count,
                                             double eps,
                                             const PosteriorConfig& config,
                                             RngStream& rng) {
  if (count < 1) throw ConfigError("posterior: count must be >= 1");
  validate(config);
  check_box(prior);
  if (!std::isfinite(eps))
    throw DomainError("posterior: threshold must be finite");

  const auto surface = surrogate.make_surface(config.predict_draws, rng);
  const double sigma2 = surrogate.noise_variance();
  const Eigen::Index d = prior.dim();

  WeightedPosterior out;
  out.samples.resize(count, d);
  out.weights.resize(count);
  for (int s = 0; s < count; ++s) {
    for (Eigen::Index j = 0; j < d; ++j)
      out.samples(s, j) = rng.uniform(prior.lower[j], prior.upper[j]);
    const QuantileMoments qm =
        surface->moments(out.samples.row(s).transpose(), config.eps_q);
    out.weights[s] = approximate_likelihood(qm.mu_q, qm.nu_q, sigma2, eps);
  }

  const double total = out.weights.sum();
  if (!std::isfinite(total))
    throw NumericalFailureError("posterior: weights are not finite");
  if (total <= 0.0) {
    out.weights.setConstant(1.0 / count);
    out.ess = count;
    out.flat_fallback = true;
    return out;
  }
  out.weights /= total;
  out.ess = 1.0 / out.weights.squaredNorm();
  return out;
}

Eigen::MatrixXd systematic_resample(const WeightedPosterior& posterior,
                                    Eigen::Index count, RngStream& rng) {
  const Eigen::Index n = posterior.weights.size();
  if (n < 1) throw InsufficientDataError("resample: empty posterior");
  if (posterior.samples.rows() != n)
    throw ShapeError("resample: samples and weights disagree");
  if (count < 1) throw ConfigError("resample: count must be >= 1");

  Eigen::MatrixXd out(count, posterior.samples.cols());
  const double step = 1.0 / static_cast<double>(count);
  double position = rng.uniform() * step;
  double cumulative = posterior.weights[0];
  Eigen::Index i = 0;
  for (Eigen::Index k = 0; k < count; ++k) {
    while (position > cumulative && i + 1 < n) {
      ++i;
      cumulative += posterior.weights[i];
    }
    out.row(k) = posterior.samples.row(i);
    position += step;
  }
  return out;
}

Eigen::MatrixXd rejection_abc_reference(const SimulatorSpec& simulator,
                                        long budget, double keep,
                                        RngStream& rng, long* failed) {
  if (budget < 1000)
    throw ConfigError("abc reference: budget must be >= 1000");
  if (!(keep > 0.0 && keep <= 1.0))
    throw ConfigError("abc reference: keep fraction must lie in (0, 1]");
  const long keep_n = std::lround(static_cast<double>(budget) * keep);
  if (keep_n < 1)
    throw ConfigError("abc reference: keep fraction keeps no samples");

  const Eigen::Index d = simulator.param_dim();
  std::vector<Eigen::VectorXd> thetas;
  std::vector<double> deltas;
  thetas.reserve(static_cast<std::size_t>(budget));
  deltas.reserve(static_cast<std::size_t>(budget));
  long failures = 0;
  for (long s = 0; s < budget; ++s) {
    const Eigen::VectorXd theta = simulator.sample_prior(rng);
    double delta = std::numeric_limits<double>::quiet_NaN();
    try {
      delta = simulator.discrepancy(simulator.simulate(theta, rng));
    } catch (const std::exception&) {
    }
    if (!std::isfinite(delta)) {
      ++failures;
      continue;
    }
    thetas.push_back(theta);
    deltas.push_back(delta);
  }
  if (failed != nullptr) *failed = failures;
  if (static_cast<long>(deltas.size()) < keep_n)
    throw InsufficientDataError(
        "abc reference: too many failed simulations for the keep count");

  std::vector<std::size_t> order(deltas.size());
  std::iota(order.begin(), order.end(), 0u);
  const auto by_delta = [&](std::size_t a, std::size_t b) {
    return deltas[a] != deltas[b] ? deltas[a] < deltas[b] : a < b;
  };
  std::nth_element(order.begin(), order.begin() + (keep_n - 1), order.end(),
                   by_delta);
  std::sort(order.begin(), order.begin() + keep_n, by_delta);

  Eigen::MatrixXd out(keep_n, d);
  for (long k = 0; k < keep_n; ++k)
    out.row(k) = thetas[order[static_cast<std::size_t>(k)]].transpose();
  return out;
}

namespace {

std::string csv_string(const Eigen::MatrixXd& samples) {
  std::ostringstream out;
  write_samples_csv(out, samples);
  return out.str();
}

std::string checksum_hex(const std::string& bytes) {
  std::ostringstream out;
  out << std::hex << fnv1a64(bytes);
  return out.str();
}

}  // namespace

Eigen::MatrixXd cached_abc_reference(const SimulatorSpec& simulator,
                                     long budget, double keep,
                                     std::uint64_t seed,
                                     const std::string& cache_dir) {
  const auto compute = [&] {
    RngStream stream(seed, kAbcReferenceStreamId);
    return rejection_abc_reference(simulator, budget, keep, stream);
  };
  if (cache_dir.empty()) return compute();

  namespace fs = std::filesystem;
  const std::string stem = simulator.name + "-b" + std::to_string(budget) +
                           "-k" + format_double(keep) + "-s" +
                           std::to_string(seed);
  const fs::path csv_path = fs::path(cache_dir) / (stem + ".csv");
  const fs::path manifest_path = fs::path(cache_dir) / (stem + ".json");

  if (fs::exists(csv_path) && fs::exists(manifest_path)) {
    try {
      std::ifstream mf(manifest_path);
      const nlohmann::json manifest = nlohmann::json::parse(mf);
      std::ifstream cf(csv_path, std::ios::binary);
      std::ostringstream bytes;
      bytes << cf.rdbuf();
      if (manifest.at("version").get<int>() == kCacheManifestVersion &&
          manifest.at("simulator").get<std::string>() == simulator.name &&
          manifest.at("budget").get<long>() == budget &&
          manifest.at("keep").get<double>() == keep &&
          manifest.at("seed").get<std::uint64_t>() == seed &&
          manifest.at("checksum").get<std::string>() ==
              checksum_hex(bytes.str())) {
        std::istringstream in(bytes.str());
        Eigen::MatrixXd samples = read_samples_csv(in);
        if (samples.rows() == manifest.at("rows").get<Eigen::Index>() &&
            samples.cols() == manifest.at("dim").get<Eigen::Index>())
          return samples;
      }
    } catch (const std::exception&) {
      // fall through to recompute on any parse or checksum problem
    }
  }

  const Eigen::MatrixXd samples = compute();
  const std::string bytes = csv_string(samples);
  fs::create_directories(cache_dir);
  {
    std::ofstream cf(csv_path, std::ios::binary | std::ios::trunc);
    cf << bytes;
  }
  nlohmann::json manifest;
  manifest["version"] = kCacheManifestVersion;
  manifest["simulator"] = simulator.name;
  manifest["budget"] = budget;
  manifest["keep"] = keep;
  manifest["seed"] = seed;
  manifest["checksum"] = checksum_hex(bytes);
  manifest["rows"] = samples.rows();
  manifest["dim"] = samples.cols();
  {
    std::ofstream mf(manifest_path, std::ios::trunc);
    mf << manifest.dump(2) << '\n';
  }
  return samples;
}

std::map<std::string, double> scaled_wasserstein(
    const std::map<std::string, double>& distances) {
  if (distances.empty())
    throw InsufficientDataError("scaled wasserstein: empty distance map");
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& [name, value] : distances) {
    if (!(value > 0.0))
      throw DomainError("scaled wasserstein: distances must be positive");
    smallest = std::min(smallest, value);
  }
  std::map<std::string, double> out;
  for (const auto& [name, value] : distances) out[name] = value / smallest;
  return out;
}

void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples) {
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    if (j > 0) out << ',';
    out << "theta_" << j;
  }
  out << '\n';
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(samples(i, j));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("samples csv: missing header");
  const auto count_fields = [](const std::string& s) {
    return 1 + std::count(s.begin(), s.end(), ',');
  };
  const Eigen::Index cols = count_fields(line);

  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (count_fields(line) != cols)
      throw ConfigError("samples csv: ragged row");
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ','))
      values.push_back(std::stod(field));
    ++rows;
  }
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  return out;
}

void write_posterior_csv(std::ostream& out,
                         const WeightedPosterior& posterior) {
  for (Eigen::Index j = 0; j < posterior.samples.cols(); ++j)
    out << "theta_" << j << ',';
  out << "weight\n";
  for (Eigen::Index i = 0; i < posterior.samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < posterior.samples.cols(); ++j)
      out << format_double(posterior.samples(i, j)) << ',';
    out << format_double(posterior.weights[i]) << '\n';
  }
}

}  // namespace lfi
