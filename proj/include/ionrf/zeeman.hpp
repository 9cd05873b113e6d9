#pragma once

// Per-ion Zeeman resonances in a linear field B(z) = B0 + z dB/dz, and the
// addressing figures of merit derived from them.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "ionrf/constants.hpp"
#include "ionrf/errors.hpp"
#include "ionrf/ion_chain.hpp"

namespace ionrf {

struct ZeemanTransition {
    double lande_g = 0.8; // D3/2 of Yb+
    int delta_mj = 1;

    void validate() const {
        detail::require(std::isfinite(lande_g) && lande_g != 0.0, "Lande g-factor must be non-zero");
        detail::require(delta_mj == 1 || delta_mj == -1, "magnetic dipole transition needs delta m_J = +-1");
    }

    // |g_J| mu_B / h, Hz per tesla
    double hz_per_tesla() const { return std::abs(lande_g) * constants::bohr_magneton_hz_per_tesla; }
};

struct FieldProfile {
    double offset_tesla = 0.0;
    double gradient_tesla_per_m = 0.0;

    double at(double z) const { return offset_tesla + z * gradient_tesla_per_m; }
};

// S and J are half-integers; they are passed as doubles and checked.
inline double lande_g(int orbital_l, double spin_s, double total_j) {
    const auto is_half_integer = [](double x) { return std::abs(2.0 * x - std::round(2.0 * x)) < 1e-12; };
    detail::require(orbital_l >= 0 && spin_s >= 0.0 && total_j >= 0.0, "quantum numbers must be non-negative");
    detail::require(is_half_integer(spin_s) && is_half_integer(total_j), "S and J must be half-integers");
    const double l = orbital_l;
    detail::require(total_j >= std::abs(l - spin_s) - 1e-12 && total_j <= l + spin_s + 1e-12,
                    "J must satisfy |L - S| <= J <= L + S");
    // J must differ from L + S by an integer
    detail::require(std::abs((l + spin_s - total_j) - std::round(l + spin_s - total_j)) < 1e-12,
                    "L + S - J must be an integer");
    detail::require(total_j > 0.0, "J = 0 has no Zeeman splitting");
    const double jj = total_j * (total_j + 1.0);
    return 1.0 + (jj + spin_s * (spin_s + 1.0) - l * (l + 1.0)) / (2.0 * jj);
}

inline double resonance_frequency(const FieldProfile& field, double z, const ZeemanTransition& transition) {
    transition.validate();
    const double b = field.at(z);
    if (!(b > 0.0)) throw FieldSignError("magnetic field must be positive at the ion position");
    return transition.hz_per_tesla() * b;
}

// Splitting of two neighbouring ions a distance delta_z apart. Signed by the gradient.
inline double frequency_separation(double delta_z, double gradient_tesla_per_m, const ZeemanTransition& transition) {
    transition.validate();
    detail::require(std::isfinite(delta_z) && delta_z > 0.0, "ion separation must be positive");
    return transition.hz_per_tesla() * delta_z * gradient_tesla_per_m;
}

inline double gradient_from_separation(double delta_f, double delta_z, const ZeemanTransition& transition) {
    transition.validate();
    detail::require(std::isfinite(delta_z) && delta_z > 0.0, "ion separation must be positive");
    detail::require(std::isfinite(delta_f) && delta_f >= 0.0, "frequency separation must be non-negative");
    return delta_f / (transition.hz_per_tesla() * delta_z);
}

// Lorentzian excitation of a line detuned by `detuning`, relative to its peak.
inline double crosstalk(double detuning, double fwhm) {
    detail::require(std::isfinite(fwhm) && fwhm > 0.0, "line width must be positive");
    const double x = 2.0 * detuning / fwhm;
    return 1.0 / (1.0 + x * x);
}

// Detuning at which the Lorentzian response falls to `fraction` of its peak.
inline double detuning_for_crosstalk(double fraction, double fwhm) {
    detail::require(fraction > 0.0 && fraction <= 1.0, "crosstalk target must be in (0, 1]");
    detail::require(std::isfinite(fwhm) && fwhm > 0.0, "line width must be positive");
    return 0.5 * fwhm * std::sqrt(1.0 / fraction - 1.0);
}

struct AddressingOptions {
    double linewidth_hz = 0.0; // FWHM
    double distinguishable_threshold = 0.01;
    std::optional<double> target_crosstalk;
};

struct AddressingReport {
    std::vector<double> positions_m;
    std::vector<double> frequencies_hz;
    std::vector<double> splittings_hz;
    double linewidth_hz = 0.0;
    double min_splitting_hz = 0.0;
    double worst_crosstalk = 1.0;
    double distinguishable_threshold = 0.01;
    bool distinguishable = false;
    std::optional<double> target_crosstalk;
    std::optional<double> required_gradient_tesla_per_m;
};

inline AddressingReport addressability_report(const ChainGeometry& chain, const FieldProfile& field,
                                              const ZeemanTransition& transition,
                                              const AddressingOptions& options) {
    transition.validate();
    detail::require(options.linewidth_hz > 0.0, "line width must be positive");
    detail::require(options.distinguishable_threshold > 0.0 && options.distinguishable_threshold <= 1.0,
                    "distinguishability threshold must be in (0, 1]");

    AddressingReport report;
    report.positions_m = chain.positions;
    report.linewidth_hz = options.linewidth_hz;
    report.distinguishable_threshold = options.distinguishable_threshold;
    report.target_crosstalk = options.target_crosstalk;
    for (double z : chain.positions) report.frequencies_hz.push_back(resonance_frequency(field, z, transition));
    for (std::size_t i = 1; i < report.frequencies_hz.size(); ++i) {
        report.splittings_hz.push_back(std::abs(report.frequencies_hz[i] - report.frequencies_hz[i - 1]));
    }

    if (report.splittings_hz.empty()) {
        // A lone ion has no neighbour to disturb.
        report.min_splitting_hz = 0.0;
        report.worst_crosstalk = 0.0;
        report.distinguishable = true;
        return report;
    }

    report.min_splitting_hz = *std::min_element(report.splittings_hz.begin(), report.splittings_hz.end());
    report.worst_crosstalk = crosstalk(report.min_splitting_hz, options.linewidth_hz);
    report.distinguishable = report.worst_crosstalk <= options.distinguishable_threshold;

    if (options.target_crosstalk) {
        const double needed = detuning_for_crosstalk(*options.target_crosstalk, options.linewidth_hz);
        report.required_gradient_tesla_per_m =
            gradient_from_separation(needed, min_adjacent_separation(chain), transition);
    }
    return report;
}

inline AddressingReport addressability_report(const IonSpecies& species, const TrapConfig& trap, std::size_t n_ions,
                                              const FieldProfile& field, const ZeemanTransition& transition,
                                              const AddressingOptions& options) {
    return addressability_report(equilibrium_positions(species, trap, n_ions), field, transition, options);
}

} // namespace ionrf
