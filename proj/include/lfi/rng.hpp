#pragma once

#include <cstdint>

namespace lfi {

// Seeded random stream with value semantics. Two streams constructed with the
// same (seed, stream id) produce identical draw sequences, and copying a
// stream replays its remaining sequence. Each concurrent task must own its
// stream; a stream is never shared.
//
// The generator is xoshiro256++ seeded through splitmix64 from the
// (seed, stream) pair. All distributions are implemented explicitly so draw
// sequences do not depend on the standard library implementation.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Derives an independent child stream. Children with distinct ids are
  // decorrelated from each other and from the parent.
  RngStream spawn(std::uint64_t child) const;

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer on [0, n), n >= 1. Rejection sampling, no modulo bias.
  int uniform_int(int n);

  bool bernoulli(double p);

  // Standard normal via Box-Muller (no cached spare, so state is exactly the
  // underlying counter).
  double normal();
  double normal(double mean, double stddev);

  // Gamma(shape, scale) via Marsaglia-Tsang, with the Johnk boost for
  // shape < 1.
  double gamma(double shape, double scale);

  // Beta(a, b) as X/(X+Y) with X~Gamma(a,1), Y~Gamma(b,1).
  double beta(double a, double b);

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace lfi
