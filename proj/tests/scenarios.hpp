#pragma once

// Synthetic measurement scenarios shared by the unit tests and the acceptance run.

#include <vector>

#include "ionrf/spectrum.hpp"

namespace ionrf::scenario {

// Counts per unit signal for one reduced point: 2e4 counts/s x 150 ms x 40 repeats.
inline constexpr double kProtocolCounts = 2e4 * 0.150 * 40;

inline SpectrumModel two_ion_truth() {
    return SpectrumModel{{{-45.5e3, 49e3, 1.0}, {45.5e3, 49e3, 1.0}}, 0.0};
}

inline std::vector<double> two_ion_grid() { return linear_grid(-250e3, 250e3, 5e3); }

// Carrier with one resolved motional sideband at the axial frequency.
inline SpectrumModel carrier_sideband_truth() {
    return SpectrumModel{{{0.0, 20e3, 1.0}, {46e3, 20e3, 0.084}}, 0.02};
}

inline SpectrumModel single_line_truth() { return SpectrumModel{{{0.0, 20e3, 1.0}}, 0.02}; }

inline std::vector<double> sideband_grid() { return linear_grid(-150e3, 150e3, 3e3); }

// Counts per unit signal for the model-comparison scans.
inline constexpr double kComparisonCounts = 3000.0;

} // namespace ionrf::scenario
