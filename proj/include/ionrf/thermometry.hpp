#pragma once

// Mean phonon number and temperature from motional sideband heights.

#include <cmath>

#include "ionrf/constants.hpp"
#include "ionrf/errors.hpp"
#include "ionrf/fitting.hpp"

namespace ionrf {

enum class SidebandKind { lower, upper, unresolved };

// Inverts a_l / a_0 = <n> eta^2 and a_u / a_0 = (<n> + 1) eta^2. For large <n>
// the two sidebands are indistinguishable and the lower-sideband form is used.
inline double mean_phonon_from_ratio(double ratio, double eta_eff, SidebandKind kind) {
    if (!(eta_eff > 0.0)) throw ThermometryError("thermometry is undefined for a vanishing Lamb-Dicke parameter");
    detail::require(std::isfinite(ratio) && ratio >= 0.0, "sideband ratio must be non-negative");
    const double scaled = ratio / (eta_eff * eta_eff);
    return kind == SidebandKind::upper ? scaled - 1.0 : scaled;
}

// hbar * 2 pi nu_1 / k_B, the temperature of one motional quantum.
inline double quantum_temperature(double trap_frequency_hz) {
    return constants::planck * trap_frequency_hz / constants::boltzmann;
}

struct Temperature {
    double kelvin = 0.0;
    bool zero_temperature = false;
};

// Thermal occupation <n> = 1 / (exp(h nu / k_B T) - 1) solved for T.
inline Temperature temperature_from_phonon(double mean_phonon, double trap_frequency_hz) {
    detail::require(std::isfinite(mean_phonon) && mean_phonon >= 0.0, "mean phonon number must be >= 0");
    detail::require(std::isfinite(trap_frequency_hz) && trap_frequency_hz > 0.0, "trap frequency must be positive");
    if (mean_phonon == 0.0) return {0.0, true};
    return {quantum_temperature(trap_frequency_hz) / std::log1p(1.0 / mean_phonon), false};
}

inline double mean_phonon_from_temperature(double kelvin, double trap_frequency_hz) {
    detail::require(kelvin >= 0.0 && trap_frequency_hz > 0.0, "temperature and trap frequency must be valid");
    if (kelvin == 0.0) return 0.0;
    return 1.0 / std::expm1(quantum_temperature(trap_frequency_hz) / kelvin);
}

struct ThermometryResult {
    Measurement sideband_ratio;
    Measurement mean_phonon;
    Measurement temperature_k;
    bool zero_temperature = false;
};

// Errors propagate to first order from the ratio; eta_eff and nu_1 are taken
// as exact. dT/d<n> = T^2 / (T_q <n> (<n> + 1)) with T_q the one-quantum temperature.
inline ThermometryResult thermometry(const Measurement& ratio, double eta_eff, double trap_frequency_hz,
                                     SidebandKind kind = SidebandKind::unresolved) {
    ThermometryResult out;
    out.sideband_ratio = ratio;
    const double n = mean_phonon_from_ratio(ratio.value, eta_eff, kind);
    detail::require(n >= 0.0, "upper-sideband ratio implies a negative phonon number");
    out.mean_phonon = {n, ratio.error / (eta_eff * eta_eff)};
    const auto t = temperature_from_phonon(n, trap_frequency_hz);
    out.zero_temperature = t.zero_temperature;
    double dt_dn = 0.0;
    if (!t.zero_temperature) {
        dt_dn = t.kelvin * t.kelvin / (quantum_temperature(trap_frequency_hz) * n * (n + 1.0));
    }
    out.temperature_k = {t.kelvin, dt_dn * out.mean_phonon.error};
    return out;
}

} // namespace ionrf
