#include "lfi/optim.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "lfi/errors.hpp"

namespace lfi::opt {

namespace {

// Projected gradient: x - clip(x - g), zero at a box-constrained stationary
// point.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& g,
                                   const Bounds& box) {
  return x - box.clip(x - g);
}

}  // namespace

LbfgsResult minimize_box_lbfgs(const ObjectiveFn& fg, Eigen::VectorXd x0,
                               const Bounds& box, const LbfgsOptions& opts) {
  const Eigen::Index d = x0.size();
  LbfgsResult best;
  Eigen::VectorXd x = box.clip(std::move(x0));
  Eigen::VectorXd g(d);
  int evals = 0;

  double f = fg(x, &g);
  ++evals;
  best.x = x;
  best.f = f;

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;
  double gamma = 1.0;

  while (evals < opts.max_evals) {
    const Eigen::VectorXd pg = projected_gradient(x, g, box);
    if (pg.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      best.converged = true;
      break;
    }

    // Two-loop recursion for the L-BFGS direction.
    Eigen::VectorXd q = g;
    const int h = static_cast<int>(s_hist.size());
    Eigen::VectorXd alpha(h);
    for (int i = h - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    q *= gamma;
    for (int i = 0; i < h; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    if (dir.dot(g) > -1e-12 * dir.norm() * g.norm()) dir = -g;

    // Backtracking Armijo search along the projected path.
    constexpr double c1 = 1e-4;
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new(d);
    Eigen::VectorXd g_new(d);
    double f_new = f;
    for (int ls = 0; ls < 24 && evals < opts.max_evals; ++ls) {
      x_new = box.clip(x + step * dir);
      if ((x_new - x).lpNorm<Eigen::Infinity>() == 0.0) break;
      f_new = fg(x_new, &g_new);
      ++evals;
      if (f_new < best.f) {
        best.f = f_new;
        best.x = x_new;
      }
      if (f_new <= f + c1 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      gamma = sy / y.squaredNorm();
      while (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    const double df = std::abs(f - f_new);
    const bool tiny = df <= opts.f_tol * (std::abs(f) + opts.f_tol);
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    if (tiny) {
      best.converged = true;
      break;
    }
  }

  best.evals = evals;
  return best;
}

ObjectiveFn with_central_differences(ValueFn f, double h, const Bounds& box) {
  return [f = std::move(f), h, box](const Eigen::VectorXd& x,
                                    Eigen::VectorXd* grad) -> double {
    const double fx = f(x);
    if (grad != nullptr) {
      grad->resize(x.size());
      Eigen::VectorXd probe = x;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double hi = std::min(xi + h, box.upper[i]);
        const double lo = std::max(xi - h, box.lower[i]);
        probe[i] = hi;
        const double fp = f(probe);
        probe[i] = lo;
        const double fm = f(probe);
        probe[i] = xi;
        (*grad)[i] = (hi > lo) ? (fp - fm) / (hi - lo) : 0.0;
      }
    }
    return fx;
  };
}

MultiStartResult minimize_multistart(const ObjectiveFn& fg, const Bounds& box,
                                     const MultiStartOptions& opts,
                                     RngStream& rng,
                                     const Eigen::VectorXd* first_start) {
  const Eigen::Index d = box.dim();
  MultiStartResult out;
  out.f = std::numeric_limits<double>::infinity();

  auto random_point = [&]() {
    Eigen::VectorXd x(d);
    for (Eigen::Index i = 0; i < d; ++i)
      x[i] = rng.uniform(box.lower[i], box.upper[i]);
    return x;
  };

  int successes = 0;
  for (int r = 0; r < opts.restarts; ++r) {
    Eigen::VectorXd start = (r == 0 && first_start != nullptr)
                                ? box.clip(*first_start)
                                : random_point();
    try {
      const LbfgsResult res = minimize_box_lbfgs(fg, start, box, opts.local);
      ++successes;
      if (res.f < out.f) {
        out.f = res.f;
        out.x = res.x;
      }
    } catch (const Error&) {
      // a failed restart is skipped; the fallback below covers total failure
    }
  }
  if (successes > 0) return out;

  out.used_fallback = true;
  for (int i = 0; i < opts.fallback_probes; ++i) {
    const Eigen::VectorXd x = random_point();
    try {
      const double f = fg(x, nullptr);
      if (f < out.f) {
        out.f = f;
        out.x = x;
      }
    } catch (const Error&) {
    }
  }
  if (out.x.size() == 0)
    throw NumericalFailureError("multistart: every probe failed");
  return out;
}

Eigen::MatrixXd Adam::update(const Eigen::MatrixXd& grad) {
  if (m_.size() == 0) {
    m_ = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
    v_ = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_.array().matrix() +
       (1.0 - beta2_) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  return (step_ * (m_.array() / bc1) /
          ((v_.array() / bc2).sqrt() + eps_))
      .matrix();
}

void Adam::reset() {
  t_ = 0;
  m_.resize(0, 0);
  v_.resize(0, 0);
}

void Adam::pad_rows(Eigen::Index rows) {
  if (m_.size() == 0 || rows <= m_.rows()) return;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, m_.cols());
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(rows, v_.cols());
  m.topRows(m_.rows()) = m_;
  v.topRows(v_.rows()) = v_;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace lfi::opt
