#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ionrf/double_resonance.hpp"
#include "ionrf/thermometry.hpp"

using namespace ionrf;

TEST(MeanPhonon, FromMeasuredRatio) {
    const double n = mean_phonon_from_ratio(0.084, 1.1e-3, SidebandKind::unresolved);
    EXPECT_NEAR(n, 69421.48760330578, 1e-8);
    EXPECT_NEAR(n, 6.9e4, 0.1e4);
    EXPECT_EQ(mean_phonon_from_ratio(0.084, 1.1e-3, SidebandKind::lower), n);
    EXPECT_NEAR(mean_phonon_from_ratio(0.084, 1.1e-3, SidebandKind::upper), n - 1.0, 1e-9);
    EXPECT_EQ(mean_phonon_from_ratio(0.0, 1.1e-3, SidebandKind::lower), 0.0);
}

TEST(MeanPhonon, Errors) {
    EXPECT_THROW(mean_phonon_from_ratio(0.084, 0.0, SidebandKind::lower), ThermometryError);
    EXPECT_THROW(mean_phonon_from_ratio(0.084, -1e-3, SidebandKind::lower), ThermometryError);
    EXPECT_THROW(mean_phonon_from_ratio(-0.1, 1e-3, SidebandKind::lower), InvalidInput);
}

TEST(MeanPhonon, RoundTripThroughSidebandModel) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> eta(1e-4, 0.1), n(0.0, 1e5);
    for (int i = 0; i < 500; ++i) {
        const SidebandParams sb{eta(rng), n(rng), 46e3};
        const auto model = sideband_model({0.0, 20e3, 1.0}, sb);
        const double lower = mean_phonon_from_ratio(model.components[1].amplitude, sb.eta_eff, SidebandKind::lower);
        const double upper = mean_phonon_from_ratio(model.components[2].amplitude, sb.eta_eff, SidebandKind::upper);
        EXPECT_NEAR(lower, sb.mean_phonon, 1e-12 * std::max(1.0, sb.mean_phonon));
        EXPECT_NEAR(upper, sb.mean_phonon, 1e-12 * std::max(1.0, sb.mean_phonon));
    }
}

TEST(Temperature, HotIon) {
    const auto t = temperature_from_phonon(6.9e4, 46e3);
    EXPECT_FALSE(t.zero_temperature);
    EXPECT_NEAR(t.kelvin, 0.152329079, 1e-9);
    EXPECT_NEAR(temperature_from_phonon(69421.48760330578, 46e3).kelvin, 0.15325958, 1e-8);
    // the quoted 306 mK is about twice this value
    EXPECT_NEAR(0.306 / t.kelvin, 2.0, 0.02);
}

TEST(Temperature, UnitExponentPoint) {
    const double n = 1.0 / (std::exp(1.0) - 1.0);
    EXPECT_NEAR(temperature_from_phonon(n, 46e3).kelvin, quantum_temperature(46e3), 1e-15 * quantum_temperature(46e3));
    EXPECT_NEAR(quantum_temperature(46e3), constants::hbar * 2.0 * constants::pi * 46e3 / constants::boltzmann, 1e-20);
}

TEST(Temperature, HighTemperatureLimit) {
    for (double n : {1e3, 1e5, 1e7}) {
        const double classical = n * quantum_temperature(46e3);
        EXPECT_NEAR(temperature_from_phonon(n, 46e3).kelvin, classical, classical / n);
    }
}

TEST(Temperature, DopplerLimitOccupation) {
    EXPECT_NEAR(mean_phonon_from_temperature(470e-6, 46e3), 212.3963, 1e-3);
    EXPECT_NEAR(mean_phonon_from_temperature(470e-6, 46e3), 212.0, 1.0);
    for (double t : {1e-7, 1e-5, 470e-6, 0.15, 12.0}) {
        const double n = mean_phonon_from_temperature(t, 46e3);
        EXPECT_NEAR(temperature_from_phonon(n, 46e3).kelvin, t, 1e-12 * t);
    }
}

TEST(Temperature, GroundState) {
    const auto t = temperature_from_phonon(0.0, 46e3);
    EXPECT_TRUE(t.zero_temperature);
    EXPECT_EQ(t.kelvin, 0.0);
    EXPECT_EQ(mean_phonon_from_temperature(0.0, 46e3), 0.0);
    EXPECT_THROW(temperature_from_phonon(-1.0, 46e3), InvalidInput);
    EXPECT_THROW(temperature_from_phonon(1.0, 0.0), InvalidInput);
}

TEST(Thermometry, PropagatesRatioError) {
    const auto r = thermometry({0.084, 0.008}, 1.1e-3, 46e3);
    EXPECT_NEAR(r.mean_phonon.value, 69421.4876, 1e-3);
    EXPECT_NEAR(r.mean_phonon.error, 0.008 / (1.1e-3 * 1.1e-3), 1e-6);
    EXPECT_NEAR(r.mean_phonon.error, 0.6e4, 0.1e4);
    const double h = 1e-3;
    const double slope = (temperature_from_phonon(r.mean_phonon.value + h, 46e3).kelvin -
                          temperature_from_phonon(r.mean_phonon.value - h, 46e3).kelvin) / (2 * h);
    EXPECT_NEAR(r.temperature_k.error, slope * r.mean_phonon.error, 1e-6 * r.temperature_k.error);
    EXPECT_FALSE(r.zero_temperature);
}

TEST(Thermometry, GroundStateAndErrors) {
    const auto r = thermometry({0.0, 0.01}, 0.1, 46e3, SidebandKind::lower);
    EXPECT_TRUE(r.zero_temperature);
    EXPECT_EQ(r.temperature_k.value, 0.0);
    EXPECT_THROW(thermometry({0.005, 0.001}, 0.1, 46e3, SidebandKind::upper), InvalidInput);
    EXPECT_THROW(thermometry({0.084, 0.008}, 0.0, 46e3), ThermometryError);
}
