#pragma once

#include <cstdint>

namespace ivf {

/// splitmix64 keyed stream. Distributions are implemented here rather than
/// taken from <random> so that generated values are stable across standard
/// libraries; run-for-run determinism of datasets and batches depends on it.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform01();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n);

    /// Standard normal (Box-Muller).
    double normal();

    /// Normal(0, sigma) resampled until |x| <= 2 sigma.
    double truncated_normal(double sigma);

    bool bernoulli(double p) { return uniform01() < p; }

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Order-sensitive mix of a seed with stream labels; used to derive
/// independent per-(purpose, dataset, iteration) streams.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

}  // namespace ivf
