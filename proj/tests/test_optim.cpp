#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "lfi/errors.hpp"
#include "lfi/math.hpp"
#include "lfi/optim.hpp"
#include "lfi/rng.hpp"

using lfi::Bounds;
using lfi::RngStream;
namespace opt = lfi::opt;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Bounds cube(double lo, double hi, Eigen::Index d) {
  return Bounds(Eigen::VectorXd::Constant(d, lo),
                Eigen::VectorXd::Constant(d, hi));
}

}  // namespace

TEST_CASE("lbfgs: interior minimum of a convex quadratic") {
  const Eigen::VectorXd target = vec({0.7, -1.3, 2.0});
  Eigen::MatrixXd a(3, 3);
  a << 4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0;
  const opt::ObjectiveFn fg = [&](const Eigen::VectorXd& x,
                                  Eigen::VectorXd* grad) {
    const Eigen::VectorXd d = x - target;
    if (grad != nullptr) *grad = 2.0 * a * d;
    return d.dot(a * d);
  };
  const auto res =
      opt::minimize_box_lbfgs(fg, vec({-3.0, 3.0, -3.0}), cube(-5, 5, 3), {});
  CHECK((res.x - target).lpNorm<Eigen::Infinity>() < 1e-4);
  CHECK(res.f < 1e-8);
  CHECK(res.converged);
}

TEST_CASE("lbfgs: minimum pinned to a box face") {
  const opt::ObjectiveFn fg = [](const Eigen::VectorXd& x,
                                 Eigen::VectorXd* grad) {
    if (grad != nullptr) *grad = 2.0 * (x.array() + 2.0).matrix();
    return (x.array() + 2.0).square().sum();
  };
  const auto res =
      opt::minimize_box_lbfgs(fg, vec({4.0, 1.0}), cube(0, 5, 2), {});
  CHECK(res.x.lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(res.converged);
}

TEST_CASE("lbfgs: rosenbrock valley inside a box") {
  const opt::ObjectiveFn fg = [](const Eigen::VectorXd& x,
                                 Eigen::VectorXd* grad) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    if (grad != nullptr) {
      grad->resize(2);
      (*grad)[0] = -2.0 * a - 400.0 * x[0] * b;
      (*grad)[1] = 200.0 * b;
    }
    return a * a + 100.0 * b * b;
  };
  opt::LbfgsOptions opts;
  opts.max_evals = 1000;
  const auto res =
      opt::minimize_box_lbfgs(fg, vec({-1.5, 1.5}), cube(-2, 2, 2), opts);
  CHECK((res.x - vec({1.0, 1.0})).lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("lbfgs: iterates never leave the box and evals respect the budget") {
  int calls = 0;
  const Bounds box = cube(-1, 1, 2);
  const opt::ObjectiveFn fg = [&](const Eigen::VectorXd& x,
                                  Eigen::VectorXd* grad) {
    ++calls;
    REQUIRE(box.contains(x, 1e-12));
    if (grad != nullptr) *grad = 2.0 * (x - vec({5.0, -5.0}));
    return (x - vec({5.0, -5.0})).squaredNorm();
  };
  opt::LbfgsOptions opts;
  opts.max_evals = 37;
  const auto res = opt::minimize_box_lbfgs(fg, vec({0.0, 0.0}), box, opts);
  CHECK(res.evals == calls);
  CHECK(res.evals <= 37);
  CHECK((res.x - vec({1.0, -1.0})).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("central differences reproduce an analytic gradient") {
  const Bounds box = cube(-10, 10, 3);
  const opt::ValueFn f = [](const Eigen::VectorXd& x) {
    return std::sin(x[0]) + x[1] * x[1] + std::exp(0.3 * x[2]);
  };
  const opt::ObjectiveFn fg = opt::with_central_differences(f, 1e-5, box);
  const Eigen::VectorXd x = vec({0.4, -1.1, 0.9});
  Eigen::VectorXd g;
  const double val = fg(x, &g);
  CHECK(val == doctest::Approx(f(x)));
  CHECK(g[0] == doctest::Approx(std::cos(0.4)).epsilon(1e-7));
  CHECK(g[1] == doctest::Approx(-2.2).epsilon(1e-7));
  CHECK(g[2] == doctest::Approx(0.3 * std::exp(0.27)).epsilon(1e-7));
}

TEST_CASE("central differences clip the stencil at the boundary") {
  const Bounds box = cube(0, 1, 1);
  int out_of_box = 0;
  const opt::ValueFn f = [&](const Eigen::VectorXd& x) {
    if (x[0] < 0.0 || x[0] > 1.0) ++out_of_box;
    return x[0] * x[0];
  };
  const opt::ObjectiveFn fg = opt::with_central_differences(f, 1e-4, box);
  Eigen::VectorXd g;
  fg(vec({0.0}), &g);
  CHECK(out_of_box == 0);
  CHECK(std::abs(g[0]) < 1e-3);
  fg(vec({1.0}), &g);
  CHECK(out_of_box == 0);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("multistart finds the global minimum of a double well") {
  const Bounds box = cube(-2, 2, 1);
  const auto value = [](double x) {
    return (x * x - 1.0) * (x * x - 1.0) + 0.1 * x;
  };
  double best_grid = 1e300;
  for (int i = 0; i <= 400000; ++i) {
    const double x = -2.0 + 4.0 * static_cast<double>(i) / 400000.0;
    best_grid = std::min(best_grid, value(x));
  }
  const opt::ObjectiveFn fg = opt::with_central_differences(
      [&](const Eigen::VectorXd& x) { return value(x[0]); }, 1e-6, box);
  RngStream rng(77, 0);
  opt::MultiStartOptions opts;
  opts.restarts = 10;
  opts.local.max_evals = 200;
  const auto res = opt::minimize_multistart(fg, box, opts, rng);
  CHECK_FALSE(res.used_fallback);
  CHECK(res.f <= best_grid + 1e-6);
  CHECK(res.x[0] == doctest::Approx(-1.0).epsilon(0.05));
}

TEST_CASE("multistart honours a caller-provided first start") {
  const Bounds box = cube(-5, 5, 1);
  int first_seen = 0;
  const Eigen::VectorXd start = vec({4.25});
  const opt::ObjectiveFn fg = [&](const Eigen::VectorXd& x,
                                  Eigen::VectorXd* grad) {
    if (x[0] == 4.25) ++first_seen;
    if (grad != nullptr) *grad = 2.0 * x;
    return x.squaredNorm();
  };
  RngStream rng(78, 0);
  opt::MultiStartOptions opts;
  opts.restarts = 3;
  opt::MultiStartResult res =
      opt::minimize_multistart(fg, box, opts, rng, &start);
  CHECK(first_seen == 1);
  CHECK(std::abs(res.x[0]) < 1e-6);
}

TEST_CASE("multistart falls back to random probes when every search throws") {
  const Bounds box = cube(-1, 1, 2);
  const opt::ObjectiveFn fg = [](const Eigen::VectorXd& x,
                                 Eigen::VectorXd* grad) {
    if (grad != nullptr)
      throw lfi::NumericalFailureError("gradient unavailable");
    return (x - vec({0.3, -0.2})).squaredNorm();
  };
  RngStream rng(79, 0);
  opt::MultiStartOptions opts;
  opts.restarts = 4;
  opts.fallback_probes = 512;
  const auto res = opt::minimize_multistart(fg, box, opts, rng);
  CHECK(res.used_fallback);
  CHECK((res.x - vec({0.3, -0.2})).lpNorm<Eigen::Infinity>() < 0.2);
}

TEST_CASE("adam climbs to the maximum of a concave function") {
  opt::Adam adam(0.05);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(1, 1);
  for (int i = 0; i < 2000; ++i) {
    const Eigen::MatrixXd grad =
        -2.0 * (theta.array() - 3.0).matrix();
    theta += adam.update(grad);
  }
  CHECK(theta(0, 0) == doctest::Approx(3.0).epsilon(1e-2));
}

TEST_CASE("adam reset restores the initial state") {
  opt::Adam a(0.01);
  opt::Adam b(0.01);
  Eigen::MatrixXd g(2, 2);
  g << 1.0, -2.0, 0.5, 3.0;
  const Eigen::MatrixXd first = a.update(g);
  a.update(g);
  a.reset();
  CHECK(((a.update(g) - first).cwiseAbs().maxCoeff()) == 0.0);
  CHECK(((b.update(g) - first).cwiseAbs().maxCoeff()) == 0.0);
}
