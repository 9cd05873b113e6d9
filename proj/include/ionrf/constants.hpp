#pragma once

#include <numbers>

// CODATA 2022 recommended values, SI units.
namespace ionrf::constants {

inline constexpr double pi = std::numbers::pi;

inline constexpr double elementary_charge = 1.602176634e-19;   // C (exact)
inline constexpr double planck = 6.62607015e-34;               // J s (exact)
inline constexpr double hbar = planck / (2.0 * pi);            // J s
inline constexpr double boltzmann = 1.380649e-23;              // J/K (exact)
inline constexpr double vacuum_permittivity = 8.8541878188e-12; // F/m
inline constexpr double atomic_mass_unit = 1.66053906892e-27;  // kg
inline constexpr double electron_mass_amu = 5.485799090441e-4; // u
inline constexpr double bohr_magneton = 9.2740100657e-24;      // J/T

// mu_B / h, i.e. 13.996 GHz/T
inline constexpr double bohr_magneton_hz_per_tesla = bohr_magneton / planck;

// 172Yb neutral atomic mass (AME2020); the ion is lighter by one electron.
inline constexpr double yb172_atomic_mass_amu = 171.9363815;
inline constexpr double yb172_ion_mass_amu = yb172_atomic_mass_amu - electron_mass_amu;

} // namespace ionrf::constants
