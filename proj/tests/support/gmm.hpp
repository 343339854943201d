#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace testsupport {

// EM fit of a 1-d Gaussian mixture with deterministic quantile-spread
// initialization. Returns the final log likelihood.
inline double gmm_loglik_1d(const std::vector<double>& samples,
                            int components, int iterations = 300) {
  const std::size_t n = samples.size();
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> weight(components, 1.0 / components);
  std::vector<double> mu(components);
  std::vector<double> var(components);
  double total_mean = 0.0;
  for (double x : samples) total_mean += x;
  total_mean /= static_cast<double>(n);
  double total_var = 0.0;
  for (double x : samples) total_var += (x - total_mean) * (x - total_mean);
  total_var = std::max(total_var / static_cast<double>(n), 1e-6);
  for (int c = 0; c < components; ++c) {
    const double q = (c + 0.5) / components;
    mu[c] = sorted[static_cast<std::size_t>(q * (n - 1))];
    var[c] = total_var / (components * components);
  }

  std::vector<double> resp(n * components);
  double loglik = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < iterations; ++it) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (int c = 0; c < components; ++c) {
        const double d = samples[i] - mu[c];
        const double p = weight[c] *
                         std::exp(-0.5 * d * d / var[c]) /
                         std::sqrt(2.0 * M_PI * var[c]);
        resp[i * components + c] = p;
        norm += p;
      }
      norm = std::max(norm, 1e-300);
      for (int c = 0; c < components; ++c) resp[i * components + c] /= norm;
      ll += std::log(norm);
    }
    if (std::abs(ll - loglik) < 1e-9 * (1.0 + std::abs(ll))) {
      loglik = ll;
      break;
    }
    loglik = ll;
    for (int c = 0; c < components; ++c) {
      double wsum = 0.0;
      double msum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        wsum += resp[i * components + c];
        msum += resp[i * components + c] * samples[i];
      }
      wsum = std::max(wsum, 1e-12);
      mu[c] = msum / wsum;
      double vsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = samples[i] - mu[c];
        vsum += resp[i * components + c] * d * d;
      }
      var[c] = std::max(vsum / wsum, 1e-6);
      weight[c] = wsum / static_cast<double>(n);
    }
  }
  return loglik;
}

// Bayesian information criterion: -2 loglik + params log(n), with
// 3k - 1 free parameters for a k-component 1-d mixture.
inline double gmm_bic_1d(const std::vector<double>& samples, int components) {
  const double ll = gmm_loglik_1d(samples, components);
  const double params = 3.0 * components - 1.0;
  return -2.0 * ll + params * std::log(static_cast<double>(samples.size()));
}

}  // namespace testsupport
