#pragma once

// Stochastic model of the double-resonance measurement campaign: cooling /
// delay / probe cycles over a seven-point detuning schedule, Poisson photon
// counts, slow drift of the line center with recentering scans, and the
// averaging and background subtraction that turn raw counts into a spectrum.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ionrf/errors.hpp"
#include "ionrf/random.hpp"
#include "ionrf/spectrum.hpp"

namespace ionrf {

inline constexpr double kNormalizationDetuningHz = 0.0;
inline constexpr double kCenterCheckDetuningHz = 15e3;
inline constexpr double kBackgroundDetuningHz = 250e3;

// interleaved: each cycle steps once through all seven detunings.
// blocked: each cycle repeats a single detuning `repeats_per_detuning` times.
enum class ScheduleMode { interleaved, blocked };

struct ProtocolConfig {
    double probe_duration_s = 0.150;
    double cool_duration_s = 0.100;
    double pre_probe_delay_s = 0.050;
    std::vector<double> variable_detunings_hz;
    int repeats_per_detuning = 40;
    std::uint64_t rng_seed = 1;
    double count_rate_scale = 2e4; // counts/s for unit truth signal
    ScheduleMode mode = ScheduleMode::interleaved;
    bool recenter = true;

    void validate() const {
        detail::require(probe_duration_s > 0.0 && cool_duration_s > 0.0 && pre_probe_delay_s > 0.0,
                        "protocol durations must be positive");
        detail::require(repeats_per_detuning >= 1, "repeats per detuning must be at least one");
        detail::require(!variable_detunings_hz.empty(), "at least one variable detuning is required");
        for (double d : variable_detunings_hz) detail::require(d > 0.0, "variable detunings must be positive");
        detail::require(std::isfinite(count_rate_scale) && count_rate_scale >= 0.0, "count rate must be >= 0");
    }
};

struct DriftModel {
    double center_drift_rate_hz_per_s = 0.0;
    double jitter_hz = 0.0; // RMS random-walk step per cycle

    void validate() const {
        detail::require(std::isfinite(center_drift_rate_hz_per_s), "drift rate must be finite");
        detail::require(std::isfinite(jitter_hz) && jitter_hz >= 0.0, "drift jitter must be >= 0");
    }
};

struct Schedule {
    // 0, +15 kHz, -15 kHz, +250 kHz, -250 kHz, +Delta, -Delta
    std::array<double, 7> detunings_hz{};
    // The signal pair coincides with one of the fixed points.
    bool degenerate = false;
};

inline Schedule seven_point_schedule(double variable_detuning_hz) {
    detail::require(std::isfinite(variable_detuning_hz) && variable_detuning_hz > 0.0,
                    "variable detuning must be positive");
    Schedule s;
    s.detunings_hz = {kNormalizationDetuningHz, kCenterCheckDetuningHz, -kCenterCheckDetuningHz,
                      kBackgroundDetuningHz,    -kBackgroundDetuningHz, variable_detuning_hz,
                      -variable_detuning_hz};
    s.degenerate = variable_detuning_hz == kCenterCheckDetuningHz || variable_detuning_hz == kBackgroundDetuningHz;
    return s;
}

struct ProbeRecord {
    int cycle_index = 0;
    double detuning_hz = 0.0;
    std::uint64_t counts = 0;
    double timestamp_s = 0.0; // start of the probe window

    bool operator==(const ProbeRecord&) const = default;
};

struct RecenterEvent {
    int cycle_index = 0;
    double timestamp_s = 0.0;
    double fitted_center_hz = 0.0; // line center offset found (and removed) by the scan

    bool operator==(const RecenterEvent&) const = default;
};

struct RawCampaign {
    std::vector<ProbeRecord> records;
    std::vector<RecenterEvent> recenters;
    // Variable detunings whose signal points coincided with a fixed point.
    std::vector<double> degenerate_detunings_hz;

    bool operator==(const RawCampaign&) const = default;
};

inline RawCampaign run_campaign(const SpectrumModel& truth, const ProtocolConfig& config, const DriftModel& drift) {
    truth.validate();
    config.validate();
    drift.validate();

    RandomStream rng(config.rng_seed);
    RawCampaign raw;
    double clock = 0.0;
    double offset = 0.0;       // current shift of the line center
    double offset_time = 0.0;  // time at which `offset` was last brought up to date
    int cycle = 0;

    const auto advance_drift = [&](double t) {
        offset += drift.center_drift_rate_hz_per_s * (t - offset_time);
        offset_time = t;
    };
    const auto start_cycle = [&] {
        advance_drift(clock);
        if (config.recenter) {
            raw.recenters.push_back({cycle, clock, offset});
            offset = 0.0;
        }
        if (drift.jitter_hz > 0.0) offset += rng.normal(0.0, drift.jitter_hz);
    };
    const auto probe = [&](double detuning) {
        clock += config.cool_duration_s + config.pre_probe_delay_s;
        advance_drift(clock);
        const double mean = truth(detuning - offset) * config.count_rate_scale * config.probe_duration_s;
        raw.records.push_back({cycle, detuning, rng.poisson(mean), clock});
        clock += config.probe_duration_s;
    };

    for (double variable : config.variable_detunings_hz) {
        const Schedule schedule = seven_point_schedule(variable);
        if (schedule.degenerate) raw.degenerate_detunings_hz.push_back(variable);
        if (config.mode == ScheduleMode::interleaved) {
            for (int repeat = 0; repeat < config.repeats_per_detuning; ++repeat, ++cycle) {
                start_cycle();
                for (double d : schedule.detunings_hz) probe(d);
            }
        } else {
            for (double d : schedule.detunings_hz) {
                start_cycle();
                for (int repeat = 0; repeat < config.repeats_per_detuning; ++repeat) probe(d);
                ++cycle;
            }
        }
    }
    return raw;
}

struct CenterCheck {
    double plus = 0.0;   // normalized signal at +15 kHz
    double minus = 0.0;  // normalized signal at -15 kHz
    double sigma = 0.0;  // uncertainty of plus - minus
    bool passed = true;  // |plus - minus| < 3 sigma
};

struct ReducedCampaign {
    // frequency_hz holds |Delta|; signal is background-subtracted and normalized
    // to the Delta = 0 point; sigma from Poisson counting statistics.
    Spectrum points;
    CenterCheck center_check;
    std::vector<double> degenerate_detunings_hz;
};

struct ReductionOptions {
    double background_hz = kBackgroundDetuningHz;
    double center_check_hz = kCenterCheckDetuningHz;
};

namespace detail {

struct CountGroup {
    std::int64_t counts = 0;
    std::int64_t probes = 0;

    double mean() const { return static_cast<double>(counts) / static_cast<double>(probes); }
    // Poisson variance of the mean, floored at one count.
    double variance() const {
        return static_cast<double>(std::max<std::int64_t>(counts, 1)) /
               (static_cast<double>(probes) * static_cast<double>(probes));
    }
};

} // namespace detail

// Averages equal |Delta|, subtracts the +-250 kHz background and normalizes to
// Delta = 0. Differences are formed on integer count sums, so adding a constant
// number of counts to every probe leaves the result bit-identical.
inline ReducedCampaign reduce_campaign(const RawCampaign& raw, const ReductionOptions& options = {}) {
    std::map<double, detail::CountGroup> by_magnitude;
    std::map<double, detail::CountGroup> by_signed;
    for (const auto& r : raw.records) {
        auto& g = by_magnitude[std::abs(r.detuning_hz)];
        g.counts += static_cast<std::int64_t>(r.counts);
        g.probes += 1;
        auto& s = by_signed[r.detuning_hz];
        s.counts += static_cast<std::int64_t>(r.counts);
        s.probes += 1;
    }
    const auto peak_it = by_magnitude.find(0.0);
    const auto background_it = by_magnitude.find(options.background_hz);
    if (peak_it == by_magnitude.end() || background_it == by_magnitude.end()) {
        throw InvalidInput("campaign needs at least one complete cycle (normalization and background points)");
    }
    const auto& peak = peak_it->second;
    const auto& background = background_it->second;

    // net(g) = mean(g) - mean(bg), scaled by n_g n_bg to stay integral
    const auto net_numerator = [&](const detail::CountGroup& g) {
        return g.counts * background.probes - background.counts * g.probes;
    };
    const std::int64_t peak_numerator = net_numerator(peak);
    if (peak_numerator <= 0) throw NormalizationError("no net signal at zero detuning after background subtraction");
    const double net_peak =
        static_cast<double>(peak_numerator) / (static_cast<double>(peak.probes) * static_cast<double>(background.probes));

    const auto normalized = [&](const detail::CountGroup& g) {
        return (static_cast<double>(net_numerator(g)) * static_cast<double>(peak.probes)) /
               (static_cast<double>(peak_numerator) * static_cast<double>(g.probes));
    };

    ReducedCampaign out;
    for (const auto& [magnitude, group] : by_magnitude) {
        const double y = magnitude == 0.0 ? 1.0 : normalized(group);
        double variance;
        if (magnitude == 0.0) {
            variance = peak.variance() + background.variance();
        } else if (magnitude == options.background_hz) {
            variance = background.variance();
        } else {
            variance = group.variance() + (y - 1.0) * (y - 1.0) * background.variance() + y * y * peak.variance();
        }
        out.points.frequency_hz.push_back(magnitude);
        out.points.signal.push_back(y);
        out.points.sigma.push_back(std::sqrt(variance) / net_peak);
    }

    const auto plus = by_signed.find(options.center_check_hz);
    const auto minus = by_signed.find(-options.center_check_hz);
    if (plus != by_signed.end() && minus != by_signed.end()) {
        out.center_check.plus = normalized(plus->second);
        out.center_check.minus = normalized(minus->second);
        out.center_check.sigma = std::sqrt(plus->second.variance() + minus->second.variance()) / net_peak;
        out.center_check.passed =
            std::abs(out.center_check.plus - out.center_check.minus) < 3.0 * out.center_check.sigma;
    }

    out.degenerate_detunings_hz = raw.degenerate_detunings_hz;
    return out;
}

inline void write_campaign_csv(std::ostream& out, const RawCampaign& raw) {
    out << "cycle_index,detuning_hz,counts,timestamp_s\n";
    for (const auto& r : raw.records) {
        out << r.cycle_index << ',' << format_number(r.detuning_hz) << ',' << r.counts << ','
            << format_number(r.timestamp_s) << '\n';
    }
}

inline RawCampaign read_campaign_csv(std::istream& in) {
    RawCampaign raw;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_number == 1 && line.rfind("cycle_index", 0) == 0) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) throw InvalidInput("campaign rows need 4 columns (line " + std::to_string(line_number) + ")");
        try {
            ProbeRecord r;
            r.cycle_index = std::stoi(cells[0]);
            r.detuning_hz = std::stod(cells[1]);
            r.counts = std::stoull(cells[2]);
            r.timestamp_s = std::stod(cells[3]);
            raw.records.push_back(r);
        } catch (const std::exception&) {
            throw InvalidInput("malformed campaign row at line " + std::to_string(line_number));
        }
    }
    return raw;
}

} // namespace ionrf
