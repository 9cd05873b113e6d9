#pragma once

// rf-optical double resonance on the D3/2 Zeeman manifold.
//
// States are ordered m = -3/2, -1/2, +1/2, +3/2. The rf field couples Delta m = +-1
// neighbours at a rate with a Lorentzian detuning profile; the pi-polarized
// repumper empties m = +-1/2 and the repumped population returns to the manifold
// with configurable branching. Fluorescence is proportional to the m = +-1/2
// population, so optical pumping into m = +-3/2 makes the ion dark unless the rf
// is resonant.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ionrf/constants.hpp"
#include "ionrf/errors.hpp"
#include "ionrf/ion_chain.hpp"
#include "ionrf/spectrum.hpp"
#include "ionrf/zeeman.hpp"

namespace ionrf {

using Populations = std::array<double, 4>;

inline constexpr Populations uniform_populations{0.25, 0.25, 0.25, 0.25};

struct RateParams {
    double rf_pump_rate = 0.0;   // 1/s, peak rate at resonance
    double repump_rate = 0.0;    // 1/s out of m = +-1/2
    Populations branching = uniform_populations;
    double carrier_fwhm_hz = 1.0;
    double signal_scale = 1.0;   // signal per unit m = +-1/2 population

    void validate() const {
        detail::require(rf_pump_rate >= 0.0 && repump_rate >= 0.0, "rates must be non-negative");
        detail::require(std::isfinite(rf_pump_rate) && std::isfinite(repump_rate), "rates must be finite");
        double total = 0.0;
        for (double b : branching) {
            detail::require(b >= 0.0, "branching fractions must be non-negative");
            total += b;
        }
        detail::require(std::abs(total - 1.0) < 1e-12, "branching fractions must sum to one");
        detail::require(std::isfinite(carrier_fwhm_hz) && carrier_fwhm_hz > 0.0, "carrier FWHM must be positive");
    }

    double rf_rate(double detuning) const {
        const double x = 2.0 * detuning / carrier_fwhm_hz;
        return rf_pump_rate / (1.0 + x * x);
    }
};

// dp/dt = A p for the four Zeeman populations.
inline Eigen::Matrix4d rate_matrix(const RateParams& params, double detuning) {
    Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
    const double w = params.rf_rate(detuning);
    for (int i = 0; i < 3; ++i) {
        a(i, i) -= w;
        a(i + 1, i) += w;
        a(i + 1, i + 1) -= w;
        a(i, i + 1) += w;
    }
    for (int source : {1, 2}) {
        a(source, source) -= params.repump_rate;
        for (int k = 0; k < 4; ++k) a(k, source) += params.repump_rate * params.branching[k];
    }
    return a;
}

struct SteadyState {
    Populations populations{};
    // No rates at all: the initial distribution is returned unchanged.
    bool degenerate = false;
};

inline SteadyState steady_state_populations(const RateParams& params, double detuning,
                                            const Populations& initial = uniform_populations) {
    params.validate();
    const double w = params.rf_rate(detuning);
    const double r = params.repump_rate;
    const auto& b = params.branching;

    if (w == 0.0 && r == 0.0) return {initial, true};

    if (w == 0.0) {
        // m = +-3/2 are absorbing; everything starting in m = +-1/2 ends up
        // split between them in proportion to the branching into each.
        SteadyState out;
        const double bright = initial[1] + initial[2];
        const double dark_branching = b[0] + b[3];
        if (dark_branching > 0.0) {
            out.populations = {initial[0] + bright * b[0] / dark_branching, 0.0, 0.0,
                               initial[3] + bright * b[3] / dark_branching};
        } else {
            const double bright_branching = b[1] + b[2];
            out.populations = {initial[0], bright * b[1] / bright_branching, bright * b[2] / bright_branching,
                               initial[3]};
        }
        return out;
    }

    // With w > 0 the chain is irreducible: the null space is one-dimensional.
    // Rates are scaled to order one so the normalization row is not lost to
    // the pivot threshold when they are large.
    Eigen::Matrix4d system = rate_matrix(params, detuning);
    system /= system.cwiseAbs().maxCoeff();
    system.row(0).setOnes();
    Eigen::Vector4d rhs = Eigen::Vector4d::Zero();
    rhs(0) = 1.0;
    Eigen::Vector4d p = system.fullPivLu().solve(rhs);

    SteadyState out;
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        out.populations[k] = std::max(p(k), 0.0);
        total += out.populations[k];
    }
    for (double& x : out.populations) x /= total;
    return out;
}

inline double fluorescence_signal(const RateParams& params, double detuning,
                                  const Populations& initial = uniform_populations) {
    const auto state = steady_state_populations(params, detuning, initial);
    return params.signal_scale * (state.populations[1] + state.populations[2]);
}

// Which frequency enters the ground-state wavefunction extent
// sqrt(hbar / (2 m nu)). `angular` uses 2 pi nu_1 and is the default; `ordinary`
// takes nu_1 in Hz at face value.
enum class ExtentConvention { angular, ordinary };

inline double wavefunction_extent(const IonSpecies& species, const TrapConfig& trap,
                                  ExtentConvention convention = ExtentConvention::angular) {
    species.validate();
    trap.validate();
    const double nu = convention == ExtentConvention::angular ? trap.axial_angular() : trap.axial_hz;
    return std::sqrt(constants::hbar / (2.0 * species.mass_kg() * nu));
}

inline double lamb_dicke_optical(double wavelength_m, const IonSpecies& species, const TrapConfig& trap,
                                 ExtentConvention convention = ExtentConvention::angular) {
    detail::require(std::isfinite(wavelength_m) && wavelength_m > 0.0, "wavelength must be positive");
    const double k = 2.0 * constants::pi / wavelength_m;
    return k * wavefunction_extent(species, trap, convention);
}

// sqrt(eta^2 + kappa^2) with kappa = extent * (d f_rf / dz) / nu_1, nu_1 in Hz.
// For rf the optical eta is negligible and defaults to zero.
inline double lamb_dicke_effective(const IonSpecies& species, const TrapConfig& trap, double gradient_tesla_per_m,
                                   const ZeemanTransition& transition,
                                   ExtentConvention convention = ExtentConvention::angular,
                                   double optical_eta = 0.0) {
    detail::require(gradient_tesla_per_m >= 0.0, "gradient magnitude must be non-negative");
    detail::require(optical_eta >= 0.0, "optical Lamb-Dicke parameter must be non-negative");
    transition.validate();
    const double frequency_slope = transition.hz_per_tesla() * gradient_tesla_per_m; // Hz/m
    const double kappa = wavefunction_extent(species, trap, convention) * frequency_slope / trap.axial_hz;
    return std::hypot(optical_eta, kappa);
}

struct SidebandParams {
    double eta_eff = 0.0;
    double mean_phonon = 0.0;
    double trap_hz = 0.0;

    void validate() const {
        detail::require(std::isfinite(eta_eff) && eta_eff >= 0.0, "effective Lamb-Dicke parameter must be >= 0");
        detail::require(std::isfinite(mean_phonon) && mean_phonon >= 0.0, "mean phonon number must be >= 0");
        detail::require(std::isfinite(trap_hz) && trap_hz > 0.0, "trap frequency must be positive");
    }

    double lower_ratio() const { return mean_phonon * eta_eff * eta_eff; }
    double upper_ratio() const { return (mean_phonon + 1.0) * eta_eff * eta_eff; }
};

// Carrier plus lower (center - nu_1) and upper (center + nu_1) sidebands, in that order.
inline SpectrumModel sideband_model(const LorentzianLine& carrier, const SidebandParams& sidebands,
                                    std::optional<double> sideband_fwhm_hz = std::nullopt) {
    sidebands.validate();
    SpectrumModel{{carrier}, 0.0}.validate();
    const double width = sideband_fwhm_hz.value_or(carrier.fwhm_hz);
    detail::require(width > 0.0, "sideband FWHM must be positive");
    SpectrumModel model;
    model.components.push_back(carrier);
    model.components.push_back({carrier.center_hz - sidebands.trap_hz, width, carrier.amplitude * sidebands.lower_ratio()});
    model.components.push_back({carrier.center_hz + sidebands.trap_hz, width, carrier.amplitude * sidebands.upper_ratio()});
    return model;
}

// Either the rate-equation line or a Lorentzian template whose centers are
// offsets from the ion's resonance (template baseline is added once per spectrum).
using LineShape = std::variant<RateParams, SpectrumModel>;

namespace detail {

class IonLine {
public:
    IonLine(const LineShape& line, const std::optional<SidebandParams>& sidebands) : line_(line) {
        if (sidebands) {
            sidebands->validate();
            sidebands_ = sidebands;
        }
        if (const auto* model = std::get_if<SpectrumModel>(&line_)) {
            model->validate();
            if (sidebands_) {
                SpectrumModel expanded;
                for (const auto& c : model->components) {
                    for (const auto& part : sideband_model(c, *sidebands_).components) expanded.components.push_back(part);
                }
                template_ = std::move(expanded.components);
            } else {
                template_ = model->components;
            }
        } else {
            std::get<RateParams>(line_).validate();
        }
    }

    double baseline() const {
        const auto* model = std::get_if<SpectrumModel>(&line_);
        return model ? model->baseline : 0.0;
    }

    // Signal of one ion at `detuning` from its resonance, excluding baseline.
    double operator()(double detuning) const {
        if (const auto* rates = std::get_if<RateParams>(&line_)) {
            double value = fluorescence_signal(*rates, detuning);
            if (sidebands_) {
                value += sidebands_->lower_ratio() * fluorescence_signal(*rates, detuning + sidebands_->trap_hz);
                value += sidebands_->upper_ratio() * fluorescence_signal(*rates, detuning - sidebands_->trap_hz);
            }
            return value;
        }
        double value = 0.0;
        for (const auto& c : template_) value += c(detuning);
        return value;
    }

private:
    LineShape line_;
    std::optional<SidebandParams> sidebands_;
    std::vector<LorentzianLine> template_;
};

} // namespace detail

// Noiseless forward model: sum over ions of the per-ion line, plus baseline.
// Each ion's contribution is summed separately and then accumulated in ion order,
// so an N-ion spectrum equals the running sum of single-ion spectra bit for bit.
inline Spectrum synthesize_spectrum(std::span<const double> ion_frequencies_hz, const LineShape& line,
                                    const std::optional<SidebandParams>& sidebands, std::span<const double> grid_hz) {
    detail::require(!grid_hz.empty(), "frequency grid must not be empty");
    detail::require(std::is_sorted(grid_hz.begin(), grid_hz.end()), "frequency grid must be sorted");
    const detail::IonLine ion_line(line, sidebands);

    Spectrum out;
    out.frequency_hz.assign(grid_hz.begin(), grid_hz.end());
    out.signal.resize(grid_hz.size());
    for (std::size_t i = 0; i < grid_hz.size(); ++i) {
        double value = ion_line.baseline();
        for (double center : ion_frequencies_hz) value += ion_line(grid_hz[i] - center);
        out.signal[i] = value;
    }
    return out;
}

// Grid and returned frequencies are relative to `reference_hz` (e.g. the
// resonance at the trap center), which keeps detunings well resolved.
inline Spectrum synthesize_spectrum(const ChainGeometry& chain, const FieldProfile& field,
                                    const ZeemanTransition& transition, const LineShape& line,
                                    const std::optional<SidebandParams>& sidebands, std::span<const double> grid_hz,
                                    double reference_hz = 0.0) {
    std::vector<double> centers;
    for (double z : chain.positions) centers.push_back(resonance_frequency(field, z, transition) - reference_hz);
    return synthesize_spectrum(centers, line, sidebands, grid_hz);
}

} // namespace ionrf
