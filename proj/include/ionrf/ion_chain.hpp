#pragma once

// Equilibrium geometry of a linear Coulomb crystal in a harmonic axial trap.
//
// Positions are solved in units of the length scale
//     l^3 = q^2 / (4 pi eps0 m (2 pi nu)^2)
// where the dimensionless energy is U(u) = sum u_i^2 / 2 + sum_{i<j} 1 / |u_i - u_j|.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ionrf/constants.hpp"
#include "ionrf/errors.hpp"

namespace ionrf {

struct IonSpecies {
    double mass_amu = constants::yb172_ion_mass_amu;
    int charge = 1; // multiples of e

    double mass_kg() const { return mass_amu * constants::atomic_mass_unit; }
    double charge_coulomb() const { return charge * constants::elementary_charge; }

    void validate() const {
        detail::require(std::isfinite(mass_amu) && mass_amu > 0.0, "ion mass must be positive");
        detail::require(charge >= 1, "ion charge must be at least one elementary charge");
    }

    static IonSpecies ytterbium172() { return {}; }
};

// Ordinary frequencies in Hz. radial_hz is informational but, when given, must
// exceed the axial frequency so the crystal stays linear.
struct TrapConfig {
    double axial_hz = 0.0;
    std::optional<double> radial_hz;

    double axial_angular() const { return 2.0 * constants::pi * axial_hz; }

    void validate() const {
        detail::require(std::isfinite(axial_hz) && axial_hz > 0.0,
                        "axial trap frequency must be positive");
        if (radial_hz) {
            detail::require(*radial_hz > axial_hz,
                            "radial trap frequency must exceed the axial frequency for a linear chain");
        }
    }
};

struct ChainGeometry {
    double length_scale = 0.0;            // m
    std::vector<double> dimensionless;    // sorted ascending
    std::vector<double> positions;        // m, z_i = l * u_i

    std::size_t n_ions() const { return positions.size(); }

    std::vector<double> separations() const {
        std::vector<double> out;
        for (std::size_t i = 1; i < positions.size(); ++i) out.push_back(positions[i] - positions[i - 1]);
        return out;
    }
};

struct ChainSolverOptions {
    double tolerance = 1e-12;
    int max_iterations = 500;
    // For long chains one ulp of u already moves the residual by ~1e-12, so a
    // solve that stagnates below this bound is accepted.
    double stagnation_tolerance = 1e-9;
};

inline double length_scale(const IonSpecies& species, const TrapConfig& trap) {
    species.validate();
    trap.validate();
    const double q = species.charge_coulomb();
    const double w = trap.axial_angular();
    return std::cbrt(q * q / (4.0 * constants::pi * constants::vacuum_permittivity * species.mass_kg() * w * w));
}

// Per-ion force imbalance u_m - sum_{n != m} sign(m - n) / (u_m - u_n)^2, which is
// also the gradient of the dimensionless energy.
inline std::vector<double> chain_force_residual(std::span<const double> u) {
    const std::size_t n = u.size();
    std::vector<double> r(n);
    for (std::size_t m = 0; m < n; ++m) {
        double coulomb = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == m) continue;
            const double d = u[m] - u[k];
            const double sign = m > k ? 1.0 : -1.0;
            coulomb += sign / (d * d);
        }
        r[m] = u[m] - coulomb;
    }
    return r;
}

inline double max_abs(std::span<const double> v) {
    double out = 0.0;
    for (double x : v) out = std::max(out, std::abs(x));
    return out;
}

inline double chain_energy(std::span<const double> u) {
    double e = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        e += 0.5 * u[i] * u[i];
        for (std::size_t j = i + 1; j < u.size(); ++j) e += 1.0 / std::abs(u[i] - u[j]);
    }
    return e;
}

namespace detail {

inline bool strictly_increasing(std::span<const double> u) {
    return std::adjacent_find(u.begin(), u.end(), std::greater_equal<>()) == u.end();
}

inline Eigen::MatrixXd chain_hessian(std::span<const double> u) {
    const auto n = static_cast<Eigen::Index>(u.size());
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = std::abs(u[i] - u[j]);
            const double c = 2.0 / (d * d * d);
            h(i, j) = -c;
            h(i, i) += c;
        }
    }
    return h;
}

inline void symmetrize(std::vector<double>& u) {
    const std::size_t n = u.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
        const double a = 0.5 * (u[n - 1 - i] - u[i]);
        u[i] = -a;
        u[n - 1 - i] = a;
    }
    if (n % 2 == 1) u[n / 2] = 0.0;
}

} // namespace detail

// Damped Newton on the gradient of U. U is strictly convex on the ordered cone,
// so backtracking that keeps the ordering reaches the unique minimum.
inline std::vector<double> equilibrium_positions_dimensionless(std::size_t n_ions,
                                                               const ChainSolverOptions& options = {}) {
    detail::require(n_ions >= 1 && n_ions <= 100, "number of ions must be in [1, 100]");
    std::vector<double> u(n_ions, 0.0);
    if (n_ions == 1) return u;

    const double half_span = std::pow(static_cast<double>(n_ions), 0.56);
    for (std::size_t i = 0; i < n_ions; ++i) {
        u[i] = -half_span + 2.0 * half_span * static_cast<double>(i) / static_cast<double>(n_ions - 1);
    }

    const auto n = static_cast<Eigen::Index>(n_ions);
    std::vector<double> residual = chain_force_residual(u);
    double worst = max_abs(residual);
    std::vector<double> trial(n_ions);

    double best = worst;
    int stalled = 0;
    for (int iteration = 0; iteration < options.max_iterations && worst >= options.tolerance; ++iteration) {
        const Eigen::MatrixXd hessian = detail::chain_hessian(u);
        const Eigen::VectorXd gradient = Eigen::Map<const Eigen::VectorXd>(residual.data(), n);
        const Eigen::VectorXd step = hessian.ldlt().solve(-gradient);

        const double energy = chain_energy(u);
        const double slope = gradient.dot(step);
        double alpha = 1.0;
        for (int halvings = 0; halvings < 60; ++halvings, alpha *= 0.5) {
            for (std::size_t i = 0; i < n_ions; ++i) trial[i] = u[i] + alpha * step[static_cast<Eigen::Index>(i)];
            if (!detail::strictly_increasing(trial)) continue;
            // Close to the minimum the energy change drowns in rounding; accept full
            // Newton steps there.
            if (worst < 1e-6) break;
            if (chain_energy(trial) <= energy + 1e-4 * alpha * slope) break;
        }
        u.swap(trial);
        residual = chain_force_residual(u);
        worst = max_abs(residual);
        if (worst < best) {
            best = worst;
            stalled = 0;
        } else if (worst < options.stagnation_tolerance && ++stalled >= 3) {
            break;
        }
    }

    detail::symmetrize(u);
    worst = max_abs(chain_force_residual(u));
    const bool stagnated_at_rounding = worst < options.stagnation_tolerance && stalled >= 3;
    if (!(worst < options.tolerance) && !stagnated_at_rounding) {
        throw ConvergenceError("ion chain solver did not converge, max residual " + std::to_string(worst),
                               worst);
    }
    return u;
}

inline ChainGeometry equilibrium_positions(const IonSpecies& species, const TrapConfig& trap,
                                           std::size_t n_ions, const ChainSolverOptions& options = {}) {
    ChainGeometry geometry;
    geometry.length_scale = length_scale(species, trap);
    geometry.dimensionless = equilibrium_positions_dimensionless(n_ions, options);
    geometry.positions.reserve(n_ions);
    for (double u : geometry.dimensionless) geometry.positions.push_back(geometry.length_scale * u);
    return geometry;
}

inline double min_adjacent_separation(const ChainGeometry& geometry) {
    detail::require(geometry.n_ions() >= 2, "minimum separation needs at least two ions");
    const auto seps = geometry.separations();
    return *std::min_element(seps.begin(), seps.end());
}

} // namespace ionrf
