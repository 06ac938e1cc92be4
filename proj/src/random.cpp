#include "docdet/random.hpp"

#include <cmath>

namespace docdet {

std::uint64_t Rng::mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

int Rng::uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next() % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u = 0.0;
    while (u <= 0.0) u = uniform();
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    spare_ = r * std::sin(2.0 * M_PI * v);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * v);
}

std::uint64_t Rng::poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    std::uint64_t total = 0;
    // Split large rates into chunks so the multiplicative method stays numerically safe.
    while (lambda > 0.0) {
        const double chunk = std::min(lambda, 20.0);
        lambda -= chunk;
        const double limit = std::exp(-chunk);
        double p = uniform();
        std::uint64_t k = 0;
        while (p > limit) {
            ++k;
            p *= uniform();
        }
        total += k;
    }
    return total;
}

}  // namespace docdet
