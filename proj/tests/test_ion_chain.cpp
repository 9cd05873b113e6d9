#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ionrf/ion_chain.hpp"
#include "oracles.hpp"

using namespace ionrf;

namespace {

const IonSpecies yb = IonSpecies::ytterbium172();

TrapConfig trap(double axial_hz) { return TrapConfig{axial_hz, std::nullopt}; }

} // namespace

// Frozen from an independent evaluation with scipy.constants (CODATA 2022).
TEST(LengthScale, MatchesIndependentCalculator) {
    EXPECT_NEAR(length_scale(yb, trap(36.3e3)), 2.495118849889878e-05, 1e-9 * 2.495e-05);
    EXPECT_NEAR(length_scale(yb, trap(46e3)), 2.130707163966615e-05, 1e-9 * 2.131e-05);
    EXPECT_NEAR(length_scale(yb, trap(260e3)), 6.715011414285743e-06, 1e-9 * 6.715e-06);
}

TEST(LengthScale, PowerLawScaling) {
    const double base = length_scale(yb, trap(36.3e3));
    EXPECT_NEAR(length_scale(yb, trap(72.6e3)) / base, std::pow(2.0, -2.0 / 3.0), 1e-14);
    IonSpecies heavy = yb;
    heavy.mass_amu *= 8.0;
    EXPECT_NEAR(length_scale(heavy, trap(36.3e3)) / base, 0.5, 1e-14);
    IonSpecies doubly = yb;
    doubly.charge = 2;
    EXPECT_NEAR(length_scale(doubly, trap(36.3e3)) / base, std::cbrt(4.0), 1e-14);
}

TEST(LengthScale, RejectsInvalidInput) {
    EXPECT_THROW(length_scale(yb, trap(0.0)), InvalidInput);
    EXPECT_THROW(length_scale(yb, trap(-1.0)), InvalidInput);
    EXPECT_THROW(length_scale(IonSpecies{0.0, 1}, trap(1e3)), InvalidInput);
    EXPECT_THROW(length_scale(IonSpecies{172.0, 0}, trap(1e3)), InvalidInput);
    EXPECT_THROW(length_scale(yb, TrapConfig{36.3e3, 20e3}), InvalidInput);
    EXPECT_NO_THROW(length_scale(yb, TrapConfig{36.3e3, 600e3}));
}

TEST(Dimensionless, ClosedForms) {
    EXPECT_EQ(equilibrium_positions_dimensionless(1), std::vector<double>{0.0});

    const auto two = equilibrium_positions_dimensionless(2);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_NEAR(two[1], std::cbrt(0.25), 1e-12);
    EXPECT_NEAR(two[0], -std::cbrt(0.25), 1e-12);

    const auto three = equilibrium_positions_dimensionless(3);
    ASSERT_EQ(three.size(), 3u);
    EXPECT_NEAR(three[0], -std::cbrt(1.25), 1e-12);
    EXPECT_NEAR(three[1], 0.0, 1e-12);
    EXPECT_NEAR(three[2], std::cbrt(1.25), 1e-12);
}

TEST(Dimensionless, RejectsOutOfRangeCounts) {
    EXPECT_THROW(equilibrium_positions_dimensionless(0), InvalidInput);
    EXPECT_THROW(equilibrium_positions_dimensionless(101), InvalidInput);
}

TEST(Dimensionless, ReportsNonConvergence) {
    ChainSolverOptions tight;
    tight.max_iterations = 1;
    tight.stagnation_tolerance = 0.0;
    try {
        equilibrium_positions_dimensionless(20, tight);
        FAIL() << "expected a convergence error";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.residual(), 1e-12);
    }
}

TEST(Dimensionless, InvariantsHoldUpToHundredIons) {
    for (std::size_t n = 1; n <= 100; ++n) {
        const auto u = equilibrium_positions_dimensionless(n);
        ASSERT_EQ(u.size(), n);
        EXPECT_LT(max_abs(chain_force_residual(u)), 1e-9) << "n=" << n;
        EXPECT_NEAR(std::accumulate(u.begin(), u.end(), 0.0), 0.0, 1e-9) << "n=" << n;
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(u[i] + u[n - 1 - i], 0.0, 1e-9);
        for (std::size_t i = 1; i < n; ++i) EXPECT_GT(u[i] - u[i - 1], 1e-6);
    }
}

TEST(Dimensionless, MatchesBruteForceMinimizer) {
    for (std::size_t n = 1; n <= 5; ++n) {
        const auto solved = equilibrium_positions_dimensionless(n);
        const auto reference = oracle::brute_force_chain(n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(solved[i], reference[i], 1e-6) << "n=" << n << " i=" << i;
    }
}

TEST(Geometry, TwoIonSeparation) {
    const auto g = equilibrium_positions(yb, trap(36.3e3), 2);
    // 2^(1/3) l with l from the independent calculator
    EXPECT_NEAR(g.separations().at(0), 31.436527609657436e-6, 1e-12);
    EXPECT_NEAR(g.separations().at(0), 31.7e-6, 0.1 * 31.7e-6);
}

TEST(Geometry, FourIonSpan) {
    const auto g = equilibrium_positions(yb, trap(46e3), 4);
    // scipy BFGS solve x l; measured value 61.3 um
    EXPECT_NEAR(g.positions.back() - g.positions.front(), 61.22808592266443e-6, 1e-6 * 61.2e-6);
    EXPECT_NEAR(g.positions.back() - g.positions.front(), 61.3e-6, 0.01 * 61.3e-6);
}

TEST(Geometry, SeparationRatioTwoToThree) {
    const auto two = equilibrium_positions(yb, trap(36.3e3), 2);
    const auto three = equilibrium_positions(yb, trap(36.3e3), 3);
    const double ratio = two.separations()[0] / three.separations()[0];
    EXPECT_NEAR(ratio, std::cbrt(8.0 / 5.0), 1e-9);
    EXPECT_NEAR(three.separations()[0], three.separations()[1], 1e-18);
}

TEST(Geometry, PositionsScaleWithTrapFrequency) {
    for (std::size_t n : {2u, 7u, 25u}) {
        const auto a = equilibrium_positions(yb, trap(36.3e3), n);
        const auto b = equilibrium_positions(yb, trap(81.7e3), n);
        const double expected = std::pow(81.7e3 / 36.3e3, 2.0 / 3.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (a.dimensionless[i] == 0.0) continue;
            EXPECT_NEAR(a.positions[i] / b.positions[i], expected, 1e-9 * expected);
        }
    }
}

TEST(MinAdjacentSeparation, Basics) {
    const auto two = equilibrium_positions(yb, trap(36.3e3), 2);
    EXPECT_DOUBLE_EQ(min_adjacent_separation(two), two.separations()[0]);
    const auto three = equilibrium_positions(yb, trap(36.3e3), 3);
    EXPECT_NEAR(min_adjacent_separation(three), three.separations()[0], 1e-18);
    EXPECT_THROW(min_adjacent_separation(equilibrium_positions(yb, trap(36.3e3), 1)), InvalidInput);
}

TEST(MinAdjacentSeparation, FortyIonsIsInnermostPair) {
    const auto g = equilibrium_positions(yb, trap(260e3), 40);
    // multi-restart scipy BFGS on the full energy
    EXPECT_NEAR(min_adjacent_separation(g), 1.7332839552950257e-6, 1e-4 * 1.733e-6);
    const auto seps = g.separations();
    EXPECT_DOUBLE_EQ(min_adjacent_separation(g), seps[19]);
}
