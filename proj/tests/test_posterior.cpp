#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lfi/bolfi.hpp"
#include "lfi/errors.hpp"
#include "lfi/evidence.hpp"
#include "lfi/gp.hpp"
#include "lfi/math.hpp"
#include "lfi/posterior.hpp"
#include "lfi/rng.hpp"
#include "lfi/simulators.hpp"
#include "lfi/surrogate.hpp"

using lfi::AcquisitionConfig;
using lfi::Bounds;
using lfi::EvidenceSet;
using lfi::GpSurrogate;
using lfi::PosteriorConfig;
using lfi::Provenance;
using lfi::QuantileMoments;
using lfi::RngStream;
using lfi::WeightedPosterior;

namespace {

Bounds cube(double lo, double hi, Eigen::Index d) {
  return Bounds(Eigen::VectorXd::Constant(d, lo),
                Eigen::VectorXd::Constant(d, hi));
}

class StubSurface final : public lfi::PredictiveSurface {
 public:
  using MomentFn = std::function<QuantileMoments(const Eigen::VectorXd&, double)>;
  explicit StubSurface(MomentFn fn) : fn_(std::move(fn)) {}
  QuantileMoments moments(const Eigen::VectorXd& theta,
                          double eps_q) const override {
    return fn_(theta, eps_q);
  }

 private:
  MomentFn fn_;
};

class StubSurrogate final : public lfi::Surrogate {
 public:
  explicit StubSurrogate(StubSurface::MomentFn fn, double noise = 0.0)
      : fn_(std::move(fn)), noise_(noise) {}
  void fit(const EvidenceSet&, RngStream&) override {}
  void refresh(const EvidenceSet&, RngStream&) override {}
  std::vector<double> predict_samples(const Eigen::VectorXd& theta, int p,
                                      RngStream&) const override {
    return std::vector<double>(static_cast<std::size_t>(p),
                               fn_(theta, 1.0).mu_q);
  }
  double noise_variance() const override { return noise_; }
  std::unique_ptr<lfi::PredictiveSurface> make_surface(
      int, RngStream&) const override {
    return std::make_unique<StubSurface>(fn_);
  }
  std::string_view kind() const override { return "stub"; }

 private:
  StubSurface::MomentFn fn_;
  double noise_;
};

AcquisitionConfig fast_acquisition() {
  AcquisitionConfig c;
  c.restarts = 4;
  c.max_evals = 40;
  c.predict_draws = 8;
  return c;
}

// Smooth on the scale of the box, so the predictive mean has a few broad
// basins and a multistart search reliably reaches the global one.
GpSurrogate fitted_gp(int seed) {
  RngStream rng(seed, 0);
  EvidenceSet ev(cube(0, 10, 1));
  for (int i = 0; i < 20; ++i) {
    const double t = rng.uniform(0.3, 9.7);
    const double y = 1.0 + std::abs(std::sin(t / 3.0)) + 0.05 * rng.normal();
    ev.add(Eigen::VectorXd::Constant(1, t), std::max(y, 0.0),
           Provenance::initial);
  }
  lfi::GpHyperparams h;
  h.lengthscales = Eigen::VectorXd::Constant(1, 1.5);
  h.kernel_variance = 1.1;
  h.bias_variance = 0.3;
  h.noise_variance = 0.05;
  GpSurrogate gp;
  gp.fit_fixed(ev, h);
  return gp;
}

// 1-D synthetic simulator: the summary is theta plus N(0, 0.25) noise and the
// observation sits at 0.8, so the discrepancy is |theta + 0.5 z - 0.8|.
lfi::SimulatorSpec gaussian_mean_simulator(std::shared_ptr<long> calls = {}) {
  lfi::SimulatorSpec sim;
  sim.name = "synth-gauss";
  sim.bounds = cube(-5.0, 5.0, 1);
  sim.theta_obs =
      lfi::ParameterVector(Eigen::VectorXd::Constant(1, 0.8), sim.bounds);
  sim.s_obs = Eigen::VectorXd::Constant(1, 0.8);
  sim.weights = Eigen::VectorXd::Ones(1);
  sim.simulate = [calls](const Eigen::VectorXd& theta, RngStream& rng) {
    if (calls) ++*calls;
    Eigen::VectorXd out(1);
    out[0] = theta[0] + 0.5 * rng.normal();
    return out;
  };
  return sim;
}

double simpson(const std::function<double(double)>& f, double lo, double hi,
               int intervals) {
  const double h = (hi - lo) / intervals;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i)
    acc += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("uniform kernel is a normalized indicator") {
  CHECK(lfi::uniform_kernel(0.0, 0.5) == 2.0);
  CHECK(lfi::uniform_kernel(0.49, 0.5) == 2.0);
  // The support is half-open, so the boundary falls outside.
  CHECK(lfi::uniform_kernel(0.5, 0.5) == 0.0);
  CHECK(lfi::uniform_kernel(0.7, 0.5) == 0.0);
  // Height times width integrates to one.
  for (double eps : {0.05, 0.3, 2.0})
    CHECK(lfi::uniform_kernel(0.5 * eps, eps) * eps == doctest::Approx(1.0));

  CHECK_THROWS_AS(lfi::uniform_kernel(0.1, 0.0), lfi::DomainError);
  CHECK_THROWS_AS(lfi::uniform_kernel(0.1, -1.0), lfi::DomainError);
  CHECK_THROWS_AS(lfi::uniform_kernel(-0.1, 0.5), lfi::DomainError);

  const lfi::AbcKernel kernel(0.25);
  CHECK(kernel(0.1) == 4.0);
  CHECK(kernel(0.3) == 0.0);
  CHECK_THROWS_AS(lfi::AbcKernel(0.0), lfi::DomainError);
}

TEST_CASE("approximate likelihood is the normal tail mass below the threshold") {
  // Threshold equal to the mean leaves exactly half the mass.
  CHECK(lfi::approximate_likelihood(0.4, 0.5, 0.5, 0.4) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // One standard deviation of headroom.
  CHECK(lfi::approximate_likelihood(0.0, 0.25, 0.75, 1.0) ==
        doctest::Approx(0.8413447460685429).epsilon(1e-12));
  // A mean far above the threshold gives zero mass.
  CHECK(lfi::approximate_likelihood(1e9, 1.0, 0.0, 0.0) == 0.0);

  // Strictly decreasing in the predicted mean.
  double prev = 2.0;
  for (double mu = -2.0; mu <= 2.0; mu += 0.25) {
    const double w = lfi::approximate_likelihood(mu, 0.3, 0.2, 0.1);
    CHECK(w < prev);
    prev = w;
  }
  // Strictly increasing in the threshold.
  prev = -1.0;
  for (double eps = -1.0; eps <= 1.0; eps += 0.25) {
    const double w = lfi::approximate_likelihood(0.4, 0.3, 0.2, eps);
    CHECK(w > prev);
    prev = w;
  }
  // More predictive spread softens a mean above the threshold.
  CHECK(lfi::approximate_likelihood(2.0, 4.0, 0.0, 1.0) >
        lfi::approximate_likelihood(2.0, 1.0, 0.0, 1.0));

  CHECK_THROWS_AS(lfi::approximate_likelihood(0.0, -0.1, 0.5, 0.0),
                  lfi::DomainError);
  CHECK_THROWS_AS(lfi::approximate_likelihood(0.0, 0.5, -0.1, 0.0),
                  lfi::DomainError);
  CHECK_THROWS_AS(lfi::approximate_likelihood(0.0, 0.0, 0.0, 0.0),
                  lfi::DegenerateVarianceError);
}

TEST_CASE("surrogate threshold finds the minimum of the predictive mean") {
  const StubSurrogate quad([](const Eigen::VectorXd& t, double) {
    QuantileMoments qm;
    qm.mu_q = 3.7 + (t[0] - 0.3) * (t[0] - 0.3) +
              2.0 * (t[1] - 0.6) * (t[1] - 0.6);
    qm.nu_q = 0.1;
    qm.count = 8;
    return qm;
  });
  RngStream rng(5, 0);
  const double eps = lfi::surrogate_threshold(quad, cube(0, 1, 2),
                                              fast_acquisition(), rng);
  CHECK(eps == doctest::Approx(3.7).epsilon(1e-4));

  const StubSurrogate flat([](const Eigen::VectorXd&, double) {
    return QuantileMoments{2.25, 0.4, 6};
  });
  RngStream rng2(6, 0);
  CHECK(lfi::surrogate_threshold(flat, cube(-1, 1, 3), fast_acquisition(),
                                 rng2) == doctest::Approx(2.25).epsilon(1e-12));
}

TEST_CASE("surrogate threshold lower-bounds the surface on a fitted model") {
  const GpSurrogate gp = fitted_gp(17);
  const Bounds box = cube(0, 10, 1);
  AcquisitionConfig config = fast_acquisition();
  config.restarts = 8;
  RngStream rng(7, 0);
  const double eps = lfi::surrogate_threshold(gp, box, config, rng);

  RngStream probe_rng(8, 0);
  const auto surface = gp.make_surface(config.predict_draws, probe_rng);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const Eigen::VectorXd x =
        Eigen::VectorXd::Constant(1, probe_rng.uniform(0.0, 10.0));
    best = std::min(best, surface->moments(x, config.eps_q).mu_q);
  }
  CHECK(eps <= best + 1e-6);
  CHECK(std::isfinite(eps));
}

TEST_CASE("surrogate threshold falls back to random probes") {
  auto remaining = std::make_shared<int>(3);
  const StubSurrogate flaky([remaining](const Eigen::VectorXd& t, double) {
    if (*remaining > 0) {
      --*remaining;
      throw lfi::NumericalFailureError("surface failure");
    }
    return QuantileMoments{3.7 + (t[0] - 0.3) * (t[0] - 0.3), 0.1, 8};
  });
  AcquisitionConfig config = fast_acquisition();
  config.restarts = 3;
  RngStream rng(9, 0);
  bool used_fallback = false;
  const double eps =
      lfi::surrogate_threshold(flaky, cube(0, 1, 1), config, rng, &used_fallback);
  CHECK(used_fallback);
  CHECK(eps == doctest::Approx(3.7).epsilon(1e-3));

  const StubSurrogate broken([](const Eigen::VectorXd&, double) -> QuantileMoments {
    throw lfi::NumericalFailureError("surface failure");
  });
  RngStream rng2(10, 0);
  CHECK_THROWS_AS(lfi::surrogate_threshold(broken, cube(0, 1, 1), config, rng2),
                  lfi::NumericalFailureError);
}

TEST_CASE("surrogate threshold rejects invalid configuration") {
  const StubSurrogate flat([](const Eigen::VectorXd&, double) {
    return QuantileMoments{1.0, 0.1, 4};
  });
  RngStream rng(11, 0);
  AcquisitionConfig bad = fast_acquisition();
  bad.eps_q = 0.0;
  CHECK_THROWS_AS(lfi::surrogate_threshold(flat, cube(0, 1, 1), bad, rng),
                  lfi::ConfigError);
  CHECK_THROWS_AS(
      lfi::surrogate_threshold(flat, Bounds{}, fast_acquisition(), rng),
      lfi::DomainError);
}

TEST_CASE("constant surface weights the prior uniformly") {
  const StubSurrogate flat([](const Eigen::VectorXd&, double) {
    return QuantileMoments{1.0, 0.5, 10};
  });
  const int count = 10000;
  RngStream rng(12, 0);
  const WeightedPosterior post = lfi::weighted_posterior_samples(
      flat, cube(-2.0, 3.0, 1), count, 0.5, PosteriorConfig{}, rng);

  CHECK_FALSE(post.flat_fallback);
  CHECK(post.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(post.ess == doctest::Approx(count).epsilon(1e-9));
  for (int i = 0; i < count; ++i)
    CHECK(post.weights[i] == doctest::Approx(1.0 / count).epsilon(1e-12));

  // Draws match the uniform prior (Kolmogorov-Smirnov on the only dimension).
  std::vector<double> xs(post.samples.col(0).data(),
                         post.samples.col(0).data() + count);
  std::sort(xs.begin(), xs.end());
  double ks = 0.0;
  for (int i = 0; i < count; ++i) {
    const double cdf = (xs[static_cast<std::size_t>(i)] + 2.0) / 5.0;
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / count));
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / count));
  }
  CHECK(ks < 0.025);
  for (int i = 0; i < count; ++i) {
    CHECK(post.samples(i, 0) >= -2.0);
    CHECK(post.samples(i, 0) <= 3.0);
  }
}

TEST_CASE("weighted posterior matches deterministic quadrature") {
  // mu_q(theta) = theta with unit observation noise and threshold zero gives
  // weights proportional to Phi(-theta) on the prior box.
  const StubSurrogate linear(
      [](const Eigen::VectorXd& t, double) {
        return QuantileMoments{t[0], 0.0, 16};
      },
      1.0);
  const int count = 20000;
  RngStream rng(13, 0);
  const WeightedPosterior post = lfi::weighted_posterior_samples(
      linear, cube(-6.0, 6.0, 1), count, 0.0, PosteriorConfig{}, rng);

  CHECK(post.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(post.ess > 0.0);
  CHECK(post.ess <= count);

  double mean = 0.0;
  for (int i = 0; i < count; ++i) mean += post.weights[i] * post.samples(i, 0);
  double spread = 0.0;
  for (int i = 0; i < count; ++i) {
    const double c = post.samples(i, 0) - mean;
    spread += post.weights[i] * post.weights[i] * c * c;
  }
  const double se = std::sqrt(spread);

  const auto w = [](double t) { return lfi::norm_cdf(-t); };
  const double mass = simpson(w, -6.0, 6.0, 4000);
  const double first =
      simpson([&](double t) { return t * w(t); }, -6.0, 6.0, 4000);
  CHECK(std::abs(mean - first / mass) < 4.0 * se + 1e-6);
}

TEST_CASE("all-zero weights fall back to the flat distribution") {
  const StubSurrogate hopeless([](const Eigen::VectorXd&, double) {
    return QuantileMoments{1e9, 0.5, 10};
  });
  RngStream rng(14, 0);
  const WeightedPosterior post = lfi::weighted_posterior_samples(
      hopeless, cube(0, 1, 2), 50, 0.0, PosteriorConfig{}, rng);
  CHECK(post.flat_fallback);
  CHECK(post.ess == doctest::Approx(50.0));
  for (int i = 0; i < 50; ++i)
    CHECK(post.weights[i] == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("weighted posterior sampling is deterministic and validated") {
  const StubSurrogate bumpy([](const Eigen::VectorXd& t, double) {
    return QuantileMoments{std::sin(3.0 * t[0]) + 1.5, 0.3, 10};
  });
  RngStream a(15, 0), b(15, 0);
  const WeightedPosterior pa = lfi::weighted_posterior_samples(
      bumpy, cube(0, 2, 1), 200, 1.0, PosteriorConfig{}, a);
  const WeightedPosterior pb = lfi::weighted_posterior_samples(
      bumpy, cube(0, 2, 1), 200, 1.0, PosteriorConfig{}, b);
  CHECK((pa.samples - pb.samples).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pa.weights - pb.weights).cwiseAbs().maxCoeff() == 0.0);

  RngStream rng(16, 0);
  CHECK_THROWS_AS(lfi::weighted_posterior_samples(bumpy, cube(0, 2, 1), 0, 1.0,
                                                  PosteriorConfig{}, rng),
                  lfi::ConfigError);
  CHECK_THROWS_AS(
      lfi::weighted_posterior_samples(
          bumpy, cube(0, 2, 1), 10,
          std::numeric_limits<double>::quiet_NaN(), PosteriorConfig{}, rng),
      lfi::DomainError);
  PosteriorConfig bad;
  bad.eps_q = 1.5;
  CHECK_THROWS_AS(lfi::weighted_posterior_samples(bumpy, cube(0, 2, 1), 10,
                                                  1.0, bad, rng),
                  lfi::ConfigError);
  bad = PosteriorConfig{};
  bad.predict_draws = 0;
  CHECK_THROWS_AS(lfi::weighted_posterior_samples(bumpy, cube(0, 2, 1), 10,
                                                  1.0, bad, rng),
                  lfi::ConfigError);
}

TEST_CASE("systematic resampling copies mass in proportion to the weights") {
  WeightedPosterior post;
  post.samples.resize(3, 1);
  post.samples << 10.0, 20.0, 30.0;
  post.weights.resize(3);
  post.weights << 0.5, 0.25, 0.25;
  post.ess = 2.66;

  RngStream rng(17, 0);
  const Eigen::MatrixXd rows = lfi::systematic_resample(post, 8, rng);
  REQUIRE(rows.rows() == 8);
  int c10 = 0, c20 = 0, c30 = 0;
  for (int i = 0; i < 8; ++i) {
    if (rows(i, 0) == 10.0) ++c10;
    if (rows(i, 0) == 20.0) ++c20;
    if (rows(i, 0) == 30.0) ++c30;
  }
  // Integer expected counts are hit exactly regardless of the random offset.
  CHECK(c10 == 4);
  CHECK(c20 == 2);
  CHECK(c30 == 2);
}

TEST_CASE("resampling a point mass repeats that sample") {
  WeightedPosterior post;
  post.samples.resize(5, 2);
  for (int i = 0; i < 5; ++i) post.samples.row(i) << i, -i;
  post.weights = Eigen::VectorXd::Zero(5);
  post.weights[3] = 1.0;

  RngStream rng(18, 0);
  const Eigen::MatrixXd rows = lfi::systematic_resample(post, 7, rng);
  for (int i = 0; i < 7; ++i) {
    CHECK(rows(i, 0) == 3.0);
    CHECK(rows(i, 1) == -3.0);
  }
}

TEST_CASE("resampling preserves the weighted mean") {
  RngStream rng(19, 0);
  WeightedPosterior post;
  post.samples.resize(20, 1);
  post.weights.resize(20);
  for (int i = 0; i < 20; ++i) {
    post.samples(i, 0) = rng.uniform();
    post.weights[i] = rng.uniform(0.1, 1.0);
  }
  post.weights /= post.weights.sum();

  const double weighted = (post.weights.transpose() * post.samples)(0, 0);
  const Eigen::MatrixXd rows = lfi::systematic_resample(post, 4000, rng);
  CHECK(rows.col(0).mean() == doctest::Approx(weighted).epsilon(1e-2));
}

TEST_CASE("resampling rejects degenerate inputs") {
  RngStream rng(20, 0);
  WeightedPosterior empty;
  empty.samples.resize(0, 1);
  empty.weights.resize(0);
  CHECK_THROWS_AS(lfi::systematic_resample(empty, 5, rng),
                  lfi::InsufficientDataError);

  WeightedPosterior post;
  post.samples.resize(3, 1);
  post.samples << 1, 2, 3;
  post.weights = Eigen::VectorXd::Constant(2, 0.5);
  CHECK_THROWS_AS(lfi::systematic_resample(post, 5, rng), lfi::ShapeError);

  post.weights = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  CHECK_THROWS_AS(lfi::systematic_resample(post, 0, rng), lfi::ConfigError);
}

TEST_CASE("rejection sampling keeps the requested fraction") {
  const lfi::SimulatorSpec sim = gaussian_mean_simulator();
  RngStream rng(21, 0);
  const Eigen::MatrixXd kept = lfi::rejection_abc_reference(sim, 2000, 0.01, rng);
  REQUIRE(kept.rows() == 20);
  REQUIRE(kept.cols() == 1);
  for (int i = 0; i < kept.rows(); ++i) {
    CHECK(kept(i, 0) >= -5.0);
    CHECK(kept(i, 0) <= 5.0);
  }
  // The tightest one percent of draws concentrates near the ground truth.
  CHECK(std::abs(kept.col(0).mean() - 0.8) < 0.4);
}

TEST_CASE("rejection posterior matches the conjugate oracle") {
  // With a tiny keep fraction the accepted parameters approach
  // p(theta | summary = 0.8) = N(0.8, 0.25) inside the box, so the sample
  // mean of 100 keepers lands within a few standard errors of 0.8.
  const lfi::SimulatorSpec sim = gaussian_mean_simulator();
  RngStream rng(22, 0);
  const Eigen::MatrixXd kept =
      lfi::rejection_abc_reference(sim, 20000, 0.005, rng);
  REQUIRE(kept.rows() == 100);
  const double mean = kept.col(0).mean();
  const double sd = std::sqrt(
      (kept.col(0).array() - mean).square().sum() / (kept.rows() - 1));
  CHECK(std::abs(mean - 0.8) < 0.15);
  CHECK(sd > 0.35);
  CHECK(sd < 0.65);
}

TEST_CASE("failed simulations are skipped and counted") {
  auto calls = std::make_shared<long>(0);
  lfi::SimulatorSpec sim = gaussian_mean_simulator(calls);
  auto inner = sim.simulate;
  sim.simulate = [inner, calls](const Eigen::VectorXd& theta, RngStream& rng) {
    Eigen::VectorXd out = inner(theta, rng);
    if (*calls % 4 == 0) throw std::runtime_error("simulator crash");
    return out;
  };
  RngStream rng(23, 0);
  long failed = -1;
  const Eigen::MatrixXd kept =
      lfi::rejection_abc_reference(sim, 2000, 0.01, rng, &failed);
  CHECK(kept.rows() == 20);
  CHECK(failed == 500);

  // Non-finite summaries count as failures too.
  lfi::SimulatorSpec nan_sim = gaussian_mean_simulator();
  auto base = nan_sim.simulate;
  auto count = std::make_shared<long>(0);
  nan_sim.simulate = [base, count](const Eigen::VectorXd& theta, RngStream& rng) {
    Eigen::VectorXd out = base(theta, rng);
    if (++*count % 5 == 0) out[0] = std::numeric_limits<double>::quiet_NaN();
    return out;
  };
  RngStream rng2(24, 0);
  failed = -1;
  const Eigen::MatrixXd kept2 =
      lfi::rejection_abc_reference(nan_sim, 1000, 0.01, rng2, &failed);
  CHECK(kept2.rows() == 10);
  CHECK(failed == 200);
}

TEST_CASE("rejection sampling is deterministic in the stream") {
  const lfi::SimulatorSpec sim = gaussian_mean_simulator();
  RngStream a(25, lfi::kAbcReferenceStreamId);
  RngStream b(25, lfi::kAbcReferenceStreamId);
  const Eigen::MatrixXd first = lfi::rejection_abc_reference(sim, 1000, 0.02, a);
  const Eigen::MatrixXd second = lfi::rejection_abc_reference(sim, 1000, 0.02, b);
  CHECK((first - second).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rejection sampling validates its budget") {
  const lfi::SimulatorSpec sim = gaussian_mean_simulator();
  RngStream rng(26, 0);
  CHECK_THROWS_AS(lfi::rejection_abc_reference(sim, 999, 0.01, rng),
                  lfi::ConfigError);
  CHECK_THROWS_AS(lfi::rejection_abc_reference(sim, 2000, 0.0, rng),
                  lfi::ConfigError);
  CHECK_THROWS_AS(lfi::rejection_abc_reference(sim, 2000,  1.5, rng),
                  lfi::ConfigError);
  CHECK_THROWS_AS(lfi::rejection_abc_reference(sim, 1000, 1e-9, rng),
                  lfi::ConfigError);

  lfi::SimulatorSpec doomed = gaussian_mean_simulator();
  doomed.simulate = [](const Eigen::VectorXd&, RngStream&) -> Eigen::VectorXd {
    throw std::runtime_error("always fails");
  };
  CHECK_THROWS_AS(lfi::rejection_abc_reference(doomed, 1000, 0.01, rng),
                  lfi::InsufficientDataError);
}

TEST_CASE("reference cache hits skip the simulator") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "lfi-abc-cache-test";
  fs::remove_all(dir);

  auto calls = std::make_shared<long>(0);
  const lfi::SimulatorSpec sim = gaussian_mean_simulator(calls);

  const Eigen::MatrixXd first =
      lfi::cached_abc_reference(sim, 1200, 0.01, 7, dir.string());
  CHECK(*calls == 1200);
  CHECK(fs::exists(dir / "synth-gauss-b1200-k0.01-s7.csv"));
  CHECK(fs::exists(dir / "synth-gauss-b1200-k0.01-s7.json"));

  const Eigen::MatrixXd second =
      lfi::cached_abc_reference(sim, 1200, 0.01, 7, dir.string());
  CHECK(*calls == 1200);
  CHECK((first - second).cwiseAbs().maxCoeff() == 0.0);

  // The cached draw equals a direct run on the dedicated stream.
  RngStream direct(7, lfi::kAbcReferenceStreamId);
  const Eigen::MatrixXd raw = lfi::rejection_abc_reference(sim, 1200, 0.01, direct);
  CHECK((first - raw).cwiseAbs().maxCoeff() == 0.0);

  // A different seed is a different cache entry.
  const Eigen::MatrixXd other =
      lfi::cached_abc_reference(sim, 1200, 0.01, 8, dir.string());
  CHECK(*calls == 2400 + 1200);
  CHECK((first - other).cwiseAbs().maxCoeff() > 0.0);

  fs::remove_all(dir);
}

TEST_CASE("corrupt cache entries are recomputed") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "lfi-abc-corrupt-test";
  fs::remove_all(dir);

  auto calls = std::make_shared<long>(0);
  const lfi::SimulatorSpec sim = gaussian_mean_simulator(calls);
  const Eigen::MatrixXd first =
      lfi::cached_abc_reference(sim, 1000, 0.02, 3, dir.string());
  CHECK(*calls == 1000);

  {
    std::ofstream csv(dir / "synth-gauss-b1000-k0.02-s3.csv", std::ios::app);
    csv << "tampered\n";
  }
  const Eigen::MatrixXd again =
      lfi::cached_abc_reference(sim, 1000, 0.02, 3, dir.string());
  CHECK(*calls == 2000);
  CHECK((first - again).cwiseAbs().maxCoeff() == 0.0);

  // And the rewritten entry is served from disk afterwards.
  const Eigen::MatrixXd third =
      lfi::cached_abc_reference(sim, 1000, 0.02, 3, dir.string());
  CHECK(*calls == 2000);
  CHECK((first - third).cwiseAbs().maxCoeff() == 0.0);

  fs::remove_all(dir);
}

TEST_CASE("empty cache directory disables caching") {
  auto calls = std::make_shared<long>(0);
  const lfi::SimulatorSpec sim = gaussian_mean_simulator(calls);
  const Eigen::MatrixXd first = lfi::cached_abc_reference(sim, 1000, 0.02, 3, "");
  const Eigen::MatrixXd second = lfi::cached_abc_reference(sim, 1000, 0.02, 3, "");
  CHECK(*calls == 2000);
  CHECK((first - second).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("scaled distances are relative to the best model") {
  const std::map<std::string, double> raw = {{"gp", 4.0}, {"lv-2gp", 2.0}};
  const auto scaled = lfi::scaled_wasserstein(raw);
  CHECK(scaled.at("gp") == 2.0);
  CHECK(scaled.at("lv-2gp") == 1.0);

  const auto single = lfi::scaled_wasserstein({{"only", 3.3}});
  CHECK(single.at("only") == 1.0);

  CHECK_THROWS_AS(lfi::scaled_wasserstein({}), lfi::InsufficientDataError);
  CHECK_THROWS_AS(lfi::scaled_wasserstein({{"bad", 0.0}}), lfi::DomainError);
  CHECK_THROWS_AS(lfi::scaled_wasserstein({{"bad", -2.0}}), lfi::DomainError);
}

TEST_CASE("sample csv round-trips bitwise") {
  Eigen::MatrixXd samples(4, 3);
  samples << 0.1, -2.5e-17, 3.0,
      1234567.25, 1.0 / 3.0, -0.0,
      5e300, -5e-300, 42.0,
      0.30000000000000004, 2.0, -1.5;

  std::ostringstream out;
  lfi::write_samples_csv(out, samples);
  const std::string text = out.str();
  CHECK(text.rfind("theta_0,theta_1,theta_2\n", 0) == 0);

  std::istringstream in(text);
  const Eigen::MatrixXd parsed = lfi::read_samples_csv(in);
  REQUIRE(parsed.rows() == 4);
  REQUIRE(parsed.cols() == 3);
  CHECK((parsed - samples).cwiseAbs().maxCoeff() == 0.0);

  std::istringstream empty("");
  CHECK_THROWS_AS(lfi::read_samples_csv(empty), lfi::ConfigError);
  std::istringstream ragged("theta_0,theta_1\n1.0\n");
  CHECK_THROWS_AS(lfi::read_samples_csv(ragged), lfi::ConfigError);
}

TEST_CASE("posterior csv carries a trailing weight column") {
  WeightedPosterior post;
  post.samples.resize(2, 2);
  post.samples << 0.5, 1.5, -0.25, 2.0;
  post.weights.resize(2);
  post.weights << 0.75, 0.25;

  std::ostringstream out;
  lfi::write_posterior_csv(out, post);
  std::istringstream lines(out.str());
  std::string header, row1, row2;
  REQUIRE(std::getline(lines, header));
  REQUIRE(std::getline(lines, row1));
  REQUIRE(std::getline(lines, row2));
  CHECK(header == "theta_0,theta_1,weight");
  CHECK(row1 == "0.5,1.5,0.75");
  CHECK(row2 == "-0.25,2,0.25");
}
