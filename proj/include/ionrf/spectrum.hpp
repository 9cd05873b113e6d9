#pragma once

// Lorentzian line-shape models and sampled spectra.

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ionrf/errors.hpp"

namespace ionrf {

// Peak-height parameterization: value at the center equals `amplitude`.
struct LorentzianLine {
    double center_hz = 0.0;
    double fwhm_hz = 1.0;
    double amplitude = 1.0;

    double operator()(double f) const {
        const double x = 2.0 * (f - center_hz) / fwhm_hz;
        return amplitude / (1.0 + x * x);
    }
};

struct SpectrumModel {
    std::vector<LorentzianLine> components;
    double baseline = 0.0;

    void validate() const {
        for (const auto& c : components) {
            detail::require(std::isfinite(c.fwhm_hz) && c.fwhm_hz > 0.0, "component FWHM must be positive");
            detail::require(std::isfinite(c.amplitude) && c.amplitude >= 0.0,
                            "component amplitude must be non-negative");
            detail::require(std::isfinite(c.center_hz), "component center must be finite");
        }
    }

    double operator()(double f) const {
        double value = baseline;
        for (const auto& c : components) value += c(f);
        return value;
    }

    // Same model with every center moved by `offset`.
    SpectrumModel shifted(double offset) const {
        SpectrumModel out = *this;
        for (auto& c : out.components) c.center_hz += offset;
        return out;
    }
};

// Sampled (frequency, signal) data; `sigma` is either empty or one per sample.
struct Spectrum {
    std::vector<double> frequency_hz;
    std::vector<double> signal;
    std::vector<double> sigma;

    std::size_t size() const { return frequency_hz.size(); }
    bool has_sigma() const { return !sigma.empty(); }

    void validate() const {
        detail::require(signal.size() == frequency_hz.size(), "spectrum columns differ in length");
        detail::require(sigma.empty() || sigma.size() == frequency_hz.size(), "sigma column length mismatch");
    }
};

inline std::vector<double> linear_grid(double start, double stop, double step) {
    detail::require(step > 0.0 && stop >= start, "grid needs start <= stop and a positive step");
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    std::vector<double> grid(count);
    for (std::size_t i = 0; i < count; ++i) grid[i] = start + step * static_cast<double>(i);
    return grid;
}

inline std::string format_number(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof buffer, "%.12g", value);
    return buffer;
}

inline void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum) {
    spectrum.validate();
    out << (spectrum.has_sigma() ? "frequency_hz,signal,sigma\n" : "frequency_hz,signal\n");
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        out << format_number(spectrum.frequency_hz[i]) << ',' << format_number(spectrum.signal[i]);
        if (spectrum.has_sigma()) out << ',' << format_number(spectrum.sigma[i]);
        out << '\n';
    }
}

// Accepts two or three numeric columns; a non-numeric first line is treated as a header.
inline Spectrum read_spectrum_csv(std::istream& in) {
    Spectrum spectrum;
    std::string line;
    std::size_t line_number = 0;
    std::size_t columns = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        std::vector<double> fields;
        std::stringstream row(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(row, cell, ',')) {
            char* end = nullptr;
            const double value = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || cell.find_first_not_of(" \t", static_cast<std::size_t>(end - cell.c_str())) !=
                                           std::string::npos) {
                numeric = false;
                break;
            }
            fields.push_back(value);
        }
        if (!numeric) {
            if (spectrum.size() == 0 && columns == 0) continue; // header
            throw InvalidInput("non-numeric spectrum row at line " + std::to_string(line_number));
        }
        if (fields.size() != 2 && fields.size() != 3) {
            throw InvalidInput("spectrum rows need 2 or 3 columns (line " + std::to_string(line_number) + ")");
        }
        if (columns == 0) columns = fields.size();
        if (fields.size() != columns) {
            throw InvalidInput("inconsistent column count at line " + std::to_string(line_number));
        }
        spectrum.frequency_hz.push_back(fields[0]);
        spectrum.signal.push_back(fields[1]);
        if (columns == 3) spectrum.sigma.push_back(fields[2]);
    }
    return spectrum;
}

} // namespace ionrf
