#pragma once

// Reproducible random streams. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard. The distributions below are written out
// explicitly because the std:: distributions are implementation-defined, and
// golden campaign files must not change between toolchains.
//
//   uniform: top 53 bits of one engine draw, mapped to the open interval (0, 1)
//   normal:  Box-Muller, cosine branch only (two uniforms per draw)
//   poisson: sequential inversion for mean < 10, otherwise Hoermann's
//            transformed rejection with squeeze (PTRS, 1993)

#include <cmath>
#include <cstdint>
#include <random>

#include "ionrf/constants.hpp"

namespace ionrf {

class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = uniform();
        const double u2 = uniform();
        return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * constants::pi * u2);
    }

    std::uint64_t poisson(double mean) {
        if (!(mean > 0.0)) return 0;
        if (mean < 10.0) return poisson_inversion(mean);
        return poisson_ptrs(mean);
    }

private:
    std::uint64_t poisson_inversion(double mean) {
        double p = std::exp(-mean);
        double cumulative = p;
        const double u = uniform();
        std::uint64_t k = 0;
        while (u > cumulative && k < 1000) {
            ++k;
            p *= mean / static_cast<double>(k);
            cumulative += p;
        }
        return k;
    }

    std::uint64_t poisson_ptrs(double mean) {
        const double log_mean = std::log(mean);
        const double b = 0.931 + 2.53 * std::sqrt(mean);
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double v_r = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::abs(u);
            const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= v_r) return static_cast<std::uint64_t>(k);
            if (k < 0.0 || (us < 0.013 && v > us)) continue;
            if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
                -mean + k * log_mean - std::lgamma(k + 1.0)) {
                return static_cast<std::uint64_t>(k);
            }
        }
    }

    std::mt19937_64 engine_;
};

} // namespace ionrf
