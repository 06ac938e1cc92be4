#pragma once

#include <cstdint>
#include <random>

namespace docdet {

/// Seeded generator with distribution helpers whose output depends only on the seed,
/// not on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi);
    bool bernoulli(double p) { return uniform() < p; }
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    std::uint64_t poisson(double lambda);

    /// Deterministic child stream, e.g. one per page.
    Rng fork(std::uint64_t salt) { return Rng(next() ^ mix(salt)); }

    static std::uint64_t mix(std::uint64_t x);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace docdet
