#include "lfi/surrogate.hpp"

#include "lfi/math.hpp"

namespace lfi {

QuantileMoments quantile_moments(std::span<const double> samples,
                                 double eps_q) {
  const double cutoff = empirical_quantile(samples, eps_q);
  QuantileMoments out;
  double sum = 0.0;
  for (double v : samples) {
    if (v <= cutoff) {
      sum += v;
      ++out.count;
    }
  }
  out.mu_q = sum / out.count;
  double ss = 0.0;
  for (double v : samples) {
    if (v <= cutoff) ss += (v - out.mu_q) * (v - out.mu_q);
  }
  out.nu_q = out.count > 1 ? ss / (out.count - 1) : 0.0;
  return out;
}

}  // namespace lfi
