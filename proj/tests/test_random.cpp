#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "ionrf/goodness_of_fit.hpp"
#include "ionrf/random.hpp"

using namespace ionrf;

TEST(RandomStream, SameSeedSameSequence) {
    RandomStream a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.poisson(37.5);
        EXPECT_EQ(x, b.poisson(37.5));
        differs |= x != c.poisson(37.5);
    }
    EXPECT_TRUE(differs);
}

TEST(RandomStream, UniformOpenInterval) {
    RandomStream rng(1);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / n, 0.5, 5 * std::sqrt(1.0 / 12.0 / n));
}

TEST(RandomStream, NormalMoments) {
    RandomStream rng(2);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal(3.0, 2.0);
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    EXPECT_NEAR(mean, 3.0, 5 * 2.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n - mean * mean, 4.0, 0.05);
}

TEST(RandomStream, PoissonDispersionAtHundred) {
    RandomStream rng(3);
    const int n = 10000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double k = static_cast<double>(rng.poisson(100.0));
        s += k;
        s2 += k * k;
    }
    const double mean = s / n;
    const double var = (s2 - n * mean * mean) / (n - 1);
    EXPECT_NEAR(mean, 100.0, 5 * std::sqrt(100.0 / n));
    EXPECT_GE(var / mean, 0.94);
    EXPECT_LE(var / mean, 1.06);
}

// Pearson test of the sampled histogram against the exact probabilities, on
// both sides of the algorithm switch.
TEST(RandomStream, PoissonMatchesExactDistribution) {
    for (double mean : {0.3, 4.0, 9.99, 10.0, 55.0, 2500.0}) {
        RandomStream rng(static_cast<std::uint64_t>(mean * 100) + 7);
        const int n = 100000;
        std::map<std::uint64_t, int> histogram;
        for (int i = 0; i < n; ++i) ++histogram[rng.poisson(mean)];

        // bins with expected count >= 20, tails pooled
        const auto pmf = [&](double k) { return std::exp(-mean + k * std::log(mean) - std::lgamma(k + 1.0)); };
        const double width = std::sqrt(mean);
        const auto lo = static_cast<std::uint64_t>(std::max(0.0, std::floor(mean - 6 * width - 3)));
        const auto hi = static_cast<std::uint64_t>(std::ceil(mean + 6 * width + 3));
        double chi2 = 0.0, pooled_expected = 0.0, pooled_observed = 0.0;
        int bins = 0;
        double covered = 0.0;
        for (std::uint64_t k = lo; k <= hi; ++k) {
            const double expected = n * pmf(static_cast<double>(k));
            covered += expected;
            const double observed = histogram.count(k) ? histogram[k] : 0;
            if (expected >= 20.0) {
                chi2 += (observed - expected) * (observed - expected) / expected;
                ++bins;
            } else {
                pooled_expected += expected;
                pooled_observed += observed;
            }
        }
        pooled_expected += n - covered;
        int outside = 0;
        for (const auto& [k, c] : histogram) {
            if (k < lo || k > hi) outside += c;
        }
        pooled_observed += outside;
        if (pooled_expected > 0.0) {
            chi2 += (pooled_observed - pooled_expected) * (pooled_observed - pooled_expected) / pooled_expected;
            ++bins;
        }
        ASSERT_GE(bins, 2);
        EXPECT_GT(goodness_of_fit(chi2, bins - 1), 1e-4) << "mean " << mean << " chi2 " << chi2 << " bins " << bins;
    }
}

TEST(RandomStream, PoissonEdgeMeans) {
    RandomStream rng(9);
    EXPECT_EQ(rng.poisson(0.0), 0u);
    EXPECT_EQ(rng.poisson(-3.0), 0u);
    double s = 0.0;
    for (int i = 0; i < 1000; ++i) s += static_cast<double>(rng.poisson(1e9));
    EXPECT_NEAR(s / 1000, 1e9, 5 * std::sqrt(1e9 / 1000));
}
