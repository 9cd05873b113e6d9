// ionrf command-line driver: chain | address | spectrum | protocol | fit.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ionrf/ionrf.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kRuntimeError = 1, kConfigError = 2, kSolverError = 3, kFitError = 4 };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Output helpers

// Rounded to 12 significant digits so the JSON writer emits at most 12.
double r12(double v) {
    if (!std::isfinite(v)) return v;
    return std::stod(ionrf::format_number(v));
}

ordered_json num(double v) {
    if (!std::isfinite(v)) return nullptr;
    return r12(v);
}

ordered_json num_array(const std::vector<double>& values) {
    ordered_json out = ordered_json::array();
    for (double v : values) out.push_back(num(v));
    return out;
}

ordered_json measurement(const ionrf::Measurement& m) { return {{"value", num(m.value)}, {"error", num(m.error)}}; }

void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const ordered_json& doc) { write_atomic(path, doc.dump(2) + "\n"); }

// Rectangular table written as CSV or as a JSON array of row objects.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::string csv() const {
        std::ostringstream out;
        for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
        out << "\n";
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                out << (c ? "," : "") << (std::isnan(row[c]) ? std::string() : ionrf::format_number(row[c]));
            }
            out << "\n";
        }
        return out.str();
    }

    std::string json() const {
        ordered_json out = ordered_json::array();
        for (const auto& row : rows) {
            ordered_json obj = ordered_json::object();
            for (std::size_t c = 0; c < row.size(); ++c) obj[columns[c]] = num(row[c]);
            out.push_back(obj);
        }
        return out.dump(2) + "\n";
    }
};

struct Output {
    fs::path dir = ".";
    std::string format = "csv";

    fs::path table(const std::string& stem, const Table& t) const {
        const fs::path path = dir / (stem + (format == "json" ? ".json" : ".csv"));
        write_atomic(path, format == "json" ? t.json() : t.csv());
        return path;
    }

    fs::path report(const std::string& stem, const ordered_json& doc) const {
        const fs::path path = dir / (stem + ".json");
        write_json(path, doc);
        return path;
    }
};

// ---------------------------------------------------------------------------
// Configuration

// Strict reader over one JSON object: every key must be consumed or declared.
class Section {
public:
    Section(const ordered_json* node, std::string path) : node_(node), path_(std::move(path)) {
        if (node_ && !node_->is_object()) throw ConfigError(path_ + " must be an object");
    }

    bool present() const { return node_ != nullptr; }

    bool has(const std::string& key) {
        known_.insert(key);
        return node_ && node_->contains(key) && !(*node_)[key].is_null();
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const auto& v = (*node_)[key];
        if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw ConfigError(where(key) + " must be finite");
        return x;
    }

    std::optional<double> optional_number(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return number(key, 0.0);
    }

    long long integer(const std::string& key, long long fallback) {
        if (!has(key)) return fallback;
        const auto& v = (*node_)[key];
        if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
        return v.get<long long>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const auto& v = (*node_)[key];
        if (!v.is_boolean()) throw ConfigError(where(key) + " must be true or false");
        return v.get<bool>();
    }

    std::string choice(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed) {
        if (!has(key)) return fallback;
        const auto& v = (*node_)[key];
        if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
        const auto s = v.get<std::string>();
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            throw ConfigError(where(key) + " must be one of: " + list);
        }
        return s;
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
        if (!has(key)) return fallback;
        const auto& v = (*node_)[key];
        if (!v.is_array()) throw ConfigError(where(key) + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number() || !std::isfinite(e.get<double>())) {
                throw ConfigError(where(key) + " must contain only finite numbers");
            }
            out.push_back(e.get<double>());
        }
        return out;
    }

    Section child(const std::string& key) {
        if (!has(key)) return Section(nullptr, where(key));
        return Section(&(*node_)[key], where(key));
    }

    const ordered_json* raw(const std::string& key) {
        if (!has(key)) return nullptr;
        return &(*node_)[key];
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    // Rejects keys that no reader asked for.
    void finish() const {
        if (!node_) return;
        for (const auto& [key, value] : node_->items()) {
            if (!known_.count(key)) throw ConfigError("unknown configuration key: " + where(key));
        }
    }

private:
    const ordered_json* node_;
    std::string path_;
    std::set<std::string> known_;
};

struct LineConfig {
    std::string kind = "lorentzian";
    ionrf::SpectrumModel lorentzian{{{0.0, 49e3, 1.0}}, 0.0};
    ionrf::RateParams rates;

    ionrf::LineShape shape() const {
        if (kind == "rate_model") return rates;
        return lorentzian;
    }
};

struct SidebandConfig {
    std::optional<double> eta_eff;
    double mean_phonon = 0.0;
    std::optional<double> trap_hz;
    std::optional<double> fwhm_hz;
    ionrf::ExtentConvention convention = ionrf::ExtentConvention::angular;
};

struct GridConfig {
    double start_hz = -250e3;
    double stop_hz = 250e3;
    double step_hz = 1e3;
    bool relative = true;
};

struct FitConfig {
    int components = 1;
    ionrf::ComparisonOptions comparison;
};

struct RunConfig {
    ionrf::IonSpecies species;
    ionrf::TrapConfig trap{36.3e3, std::nullopt};
    std::size_t ions = 2;
    ionrf::ChainSolverOptions solver;
    ionrf::FieldProfile field{0.67e-3, 0.27};
    ionrf::ZeemanTransition transition;
    ionrf::AddressingOptions addressing{49e3, 0.01, std::nullopt};
    LineConfig line;
    std::optional<SidebandConfig> sidebands;
    GridConfig grid;
    ionrf::ProtocolConfig protocol;
    ionrf::DriftModel drift;
    std::optional<double> protocol_carrier_fwhm_hz;
    FitConfig fit;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    std::string format = "csv";
};

std::vector<double> default_variable_detunings() {
    return {5e3, 10e3, 20e3, 30e3, 40e3, 46e3, 60e3, 80e3, 100e3, 150e3};
}

RunConfig parse_config(const ordered_json& doc) {
    RunConfig cfg;
    cfg.protocol.variable_detunings_hz = default_variable_detunings();
    Section root(&doc, "");

    {
        Section s = root.child("species");
        cfg.species.mass_amu = s.number("mass_amu", cfg.species.mass_amu);
        cfg.species.charge = static_cast<int>(s.integer("charge", cfg.species.charge));
        s.finish();
    }
    {
        Section s = root.child("trap");
        cfg.trap.axial_hz = s.number("axial_hz", cfg.trap.axial_hz);
        cfg.trap.radial_hz = s.optional_number("radial_hz");
        s.finish();
    }
    {
        const long long n = root.integer("ions", static_cast<long long>(cfg.ions));
        if (n < 1 || n > 100) throw ConfigError("ions must be in [1, 100]");
        cfg.ions = static_cast<std::size_t>(n);
    }
    {
        Section s = root.child("solver");
        cfg.solver.tolerance = s.number("tolerance", cfg.solver.tolerance);
        cfg.solver.max_iterations = static_cast<int>(s.integer("max_iterations", cfg.solver.max_iterations));
        cfg.solver.stagnation_tolerance = s.number("stagnation_tolerance", cfg.solver.stagnation_tolerance);
        s.finish();
        if (!(cfg.solver.tolerance > 0.0) || cfg.solver.max_iterations < 1) {
            throw ConfigError("solver tolerance must be positive and max_iterations at least 1");
        }
    }
    {
        Section s = root.child("field");
        cfg.field.offset_tesla = s.number("offset_tesla", cfg.field.offset_tesla);
        cfg.field.gradient_tesla_per_m = s.number("gradient_tesla_per_m", cfg.field.gradient_tesla_per_m);
        s.finish();
    }
    {
        Section s = root.child("transition");
        cfg.transition.lande_g = s.number("lande_g", cfg.transition.lande_g);
        cfg.transition.delta_mj = static_cast<int>(s.integer("delta_mj", cfg.transition.delta_mj));
        s.finish();
    }
    {
        Section s = root.child("addressing");
        cfg.addressing.linewidth_hz = s.number("linewidth_hz", cfg.addressing.linewidth_hz);
        cfg.addressing.distinguishable_threshold =
            s.number("distinguishable_threshold", cfg.addressing.distinguishable_threshold);
        cfg.addressing.target_crosstalk = s.optional_number("target_crosstalk");
        s.finish();
    }
    {
        Section s = root.child("line");
        cfg.line.kind = s.choice("kind", "lorentzian", {"lorentzian", "rate_model"});
        if (cfg.line.kind == "lorentzian") {
            auto& c = cfg.line.lorentzian.components.front();
            c.fwhm_hz = s.number("fwhm_hz", c.fwhm_hz);
            c.amplitude = s.number("amplitude", c.amplitude);
            cfg.line.lorentzian.baseline = s.number("baseline", cfg.line.lorentzian.baseline);
        } else {
            auto& r = cfg.line.rates;
            r.rf_pump_rate = s.number("rf_pump_rate_per_s", r.rf_pump_rate);
            r.repump_rate = s.number("repump_rate_per_s", r.repump_rate);
            r.carrier_fwhm_hz = s.number("carrier_fwhm_hz", r.carrier_fwhm_hz);
            r.signal_scale = s.number("signal_scale", r.signal_scale);
            const auto b = s.numbers("branching", {r.branching.begin(), r.branching.end()});
            if (b.size() != 4) throw ConfigError("line.branching must hold 4 numbers");
            std::copy(b.begin(), b.end(), r.branching.begin());
        }
        s.finish();
    }
    if (const auto* node = root.raw("sidebands")) {
        Section s(node, "sidebands");
        SidebandConfig sb;
        sb.eta_eff = s.optional_number("eta_eff");
        const auto n = s.optional_number("mean_phonon");
        const auto t = s.optional_number("temperature_k");
        if (n && t) throw ConfigError("sidebands: give mean_phonon or temperature_k, not both");
        sb.trap_hz = s.optional_number("trap_hz");
        sb.fwhm_hz = s.optional_number("fwhm_hz");
        sb.convention = s.choice("extent_convention", "angular", {"angular", "ordinary"}) == "ordinary"
                            ? ionrf::ExtentConvention::ordinary
                            : ionrf::ExtentConvention::angular;
        s.finish();
        const double trap_hz = sb.trap_hz.value_or(cfg.trap.axial_hz);
        if (t) {
            if (!(*t >= 0.0) || !(trap_hz > 0.0)) throw ConfigError("sidebands.temperature_k must be >= 0");
            sb.mean_phonon = ionrf::mean_phonon_from_temperature(*t, trap_hz);
        } else {
            sb.mean_phonon = n.value_or(0.0);
        }
        cfg.sidebands = sb;
    }
    {
        Section s = root.child("grid");
        cfg.grid.start_hz = s.number("start_hz", cfg.grid.start_hz);
        cfg.grid.stop_hz = s.number("stop_hz", cfg.grid.stop_hz);
        cfg.grid.step_hz = s.number("step_hz", cfg.grid.step_hz);
        cfg.grid.relative = s.boolean("relative", cfg.grid.relative);
        s.finish();
        if (!(cfg.grid.step_hz > 0.0) || !(cfg.grid.stop_hz >= cfg.grid.start_hz)) {
            throw ConfigError("grid needs step_hz > 0 and stop_hz >= start_hz");
        }
        if ((cfg.grid.stop_hz - cfg.grid.start_hz) / cfg.grid.step_hz > 1e7) {
            throw ConfigError("grid has more than 1e7 points");
        }
    }
    {
        Section s = root.child("protocol");
        auto& p = cfg.protocol;
        p.probe_duration_s = s.number("probe_duration_s", p.probe_duration_s);
        p.cool_duration_s = s.number("cool_duration_s", p.cool_duration_s);
        p.pre_probe_delay_s = s.number("pre_probe_delay_s", p.pre_probe_delay_s);
        p.variable_detunings_hz = s.numbers("variable_detunings_hz", p.variable_detunings_hz);
        p.repeats_per_detuning = static_cast<int>(s.integer("repeats_per_detuning", p.repeats_per_detuning));
        p.count_rate_scale = s.number("count_rate_per_s", p.count_rate_scale);
        p.mode = s.choice("mode", "interleaved", {"interleaved", "blocked"}) == "blocked"
                     ? ionrf::ScheduleMode::blocked
                     : ionrf::ScheduleMode::interleaved;
        p.recenter = s.boolean("recenter", p.recenter);
        cfg.drift.center_drift_rate_hz_per_s = s.number("drift_rate_hz_per_s", 0.0);
        cfg.drift.jitter_hz = s.number("drift_jitter_hz", 0.0);
        cfg.protocol_carrier_fwhm_hz = s.optional_number("carrier_fwhm_hz");
        s.finish();
    }
    {
        Section s = root.child("fit");
        cfg.fit.components = static_cast<int>(s.integer("components", cfg.fit.components));
        auto& o = cfg.fit.comparison;
        o.q_threshold = s.number("q_threshold", o.q_threshold);
        o.fit.max_iterations = static_cast<int>(s.integer("max_iterations", o.fit.max_iterations));
        o.fit.initial_damping = s.number("initial_damping", o.fit.initial_damping);
        o.fit.degenerate_separation = s.number("degenerate_separation", o.fit.degenerate_separation);
        s.finish();
        if (cfg.fit.components < 1) throw ConfigError("fit.components must be at least 1");
        if (o.fit.max_iterations < 1) throw ConfigError("fit.max_iterations must be at least 1");
        if (!(o.q_threshold > 0.0 && o.q_threshold < 1.0)) throw ConfigError("fit.q_threshold must be in (0, 1)");
    }
    {
        const long long seed = root.integer("seed", 1);
        if (seed < 0) throw ConfigError("seed must be non-negative");
        cfg.seed = static_cast<std::uint64_t>(seed);
    }
    {
        Section s = root.child("output");
        if (s.has("dir")) {
            const auto* v = root.raw("output");
            if (!(*v)["dir"].is_string()) throw ConfigError("output.dir must be a string");
            cfg.out_dir = (*v)["dir"].get<std::string>();
        }
        cfg.format = s.choice("format", cfg.format, {"csv", "json"});
        s.finish();
    }
    root.finish();

    // Domain validation before any computation.
    try {
        cfg.species.validate();
        cfg.trap.validate();
        cfg.transition.validate();
        if (!(cfg.addressing.linewidth_hz > 0.0)) throw ConfigError("addressing.linewidth_hz must be positive");
        if (!(cfg.addressing.distinguishable_threshold > 0.0 && cfg.addressing.distinguishable_threshold <= 1.0)) {
            throw ConfigError("addressing.distinguishable_threshold must be in (0, 1]");
        }
        if (cfg.addressing.target_crosstalk &&
            !(*cfg.addressing.target_crosstalk > 0.0 && *cfg.addressing.target_crosstalk <= 1.0)) {
            throw ConfigError("addressing.target_crosstalk must be in (0, 1]");
        }
        if (cfg.field.gradient_tesla_per_m < 0.0) throw ConfigError("field.gradient_tesla_per_m must be >= 0");
        if (cfg.line.kind == "rate_model") {
            cfg.line.rates.validate();
        } else {
            cfg.line.lorentzian.validate();
        }
        cfg.protocol.rng_seed = cfg.seed;
        cfg.protocol.validate();
        cfg.drift.validate();
        if (cfg.protocol_carrier_fwhm_hz && !(*cfg.protocol_carrier_fwhm_hz > 0.0)) {
            throw ConfigError("protocol.carrier_fwhm_hz must be positive");
        }
        if (cfg.sidebands) {
            const auto& sb = *cfg.sidebands;
            if (sb.eta_eff && !(*sb.eta_eff >= 0.0)) throw ConfigError("sidebands.eta_eff must be >= 0");
            if (!(sb.mean_phonon >= 0.0)) throw ConfigError("sidebands.mean_phonon must be >= 0");
            if (sb.trap_hz && !(*sb.trap_hz > 0.0)) throw ConfigError("sidebands.trap_hz must be positive");
            if (sb.fwhm_hz && !(*sb.fwhm_hz > 0.0)) throw ConfigError("sidebands.fwhm_hz must be positive");
        }
    } catch (const ionrf::InvalidInput& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

ordered_json load_document(const std::optional<std::string>& path) {
    if (!path) return ordered_json::object();
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot read config file " + *path);
    try {
        auto doc = ordered_json::parse(in, nullptr, true, true);
        if (!doc.is_object()) throw ConfigError("config must be a JSON object");
        return doc;
    } catch (const ordered_json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shared physics plumbing

ionrf::SidebandParams resolve_sidebands(const RunConfig& cfg) {
    const auto& sb = *cfg.sidebands;
    ionrf::SidebandParams params;
    params.trap_hz = sb.trap_hz.value_or(cfg.trap.axial_hz);
    params.mean_phonon = sb.mean_phonon;
    params.eta_eff = sb.eta_eff ? *sb.eta_eff
                                : ionrf::lamb_dicke_effective(cfg.species, cfg.trap, cfg.field.gradient_tesla_per_m,
                                                              cfg.transition, sb.convention);
    return params;
}

ordered_json sideband_json(const ionrf::SidebandParams& p, std::optional<double> fwhm) {
    ordered_json j;
    j["eta_eff"] = num(p.eta_eff);
    j["mean_phonon"] = num(p.mean_phonon);
    j["trap_hz"] = num(p.trap_hz);
    j["lower_ratio"] = num(p.lower_ratio());
    j["upper_ratio"] = num(p.upper_ratio());
    j["fwhm_hz"] = fwhm ? num(*fwhm) : ordered_json(nullptr);
    return j;
}

ordered_json header(const std::string& command, const RunConfig& cfg) {
    ordered_json j;
    j["command"] = command;
    j["seed"] = cfg.seed;
    return j;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_chain(const RunConfig& cfg, const Output& out) {
    const auto chain = ionrf::equilibrium_positions(cfg.species, cfg.trap, cfg.ions, cfg.solver);
    const auto seps = chain.separations();

    Table t{{"index", "position_m", "position_dimensionless", "separation_to_next_m"}, {}};
    for (std::size_t i = 0; i < chain.n_ions(); ++i) {
        t.rows.push_back({static_cast<double>(i), chain.positions[i], chain.dimensionless[i],
                          i < seps.size() ? seps[i] : std::nan("")});
    }
    out.table("chain", t);

    ordered_json j = header("chain", cfg);
    j["n_ions"] = chain.n_ions();
    j["mass_amu"] = num(cfg.species.mass_amu);
    j["charge"] = cfg.species.charge;
    j["axial_hz"] = num(cfg.trap.axial_hz);
    j["length_scale_m"] = num(chain.length_scale);
    j["positions_m"] = num_array(chain.positions);
    j["separations_m"] = num_array(seps);
    j["min_separation_m"] = seps.empty() ? ordered_json(nullptr) : num(*std::min_element(seps.begin(), seps.end()));
    j["max_force_residual"] = num(ionrf::max_abs(ionrf::chain_force_residual(chain.dimensionless)));
    out.report("chain_summary", j);
    return kOk;
}

int cmd_address(const RunConfig& cfg, const Output& out) {
    const auto chain = ionrf::equilibrium_positions(cfg.species, cfg.trap, cfg.ions, cfg.solver);
    const auto report = ionrf::addressability_report(chain, cfg.field, cfg.transition, cfg.addressing);

    ordered_json warnings = ordered_json::array();
    if (cfg.field.gradient_tesla_per_m == 0.0 && cfg.ions > 1) {
        const std::string w = "field gradient is zero: all ions share one resonance and cannot be addressed";
        std::cerr << "warning: " << w << "\n";
        warnings.push_back(w);
    }

    Table t{{"index", "position_m", "frequency_hz", "splitting_to_next_hz"}, {}};
    for (std::size_t i = 0; i < report.frequencies_hz.size(); ++i) {
        t.rows.push_back({static_cast<double>(i), report.positions_m[i], report.frequencies_hz[i],
                          i < report.splittings_hz.size() ? report.splittings_hz[i] : std::nan("")});
    }
    out.table("address_frequencies", t);

    ordered_json j = header("address", cfg);
    j["n_ions"] = cfg.ions;
    j["offset_tesla"] = num(cfg.field.offset_tesla);
    j["gradient_tesla_per_m"] = num(cfg.field.gradient_tesla_per_m);
    j["lande_g"] = num(cfg.transition.lande_g);
    j["delta_mj"] = cfg.transition.delta_mj;
    j["linewidth_hz"] = num(report.linewidth_hz);
    j["positions_m"] = num_array(report.positions_m);
    j["frequencies_hz"] = num_array(report.frequencies_hz);
    j["splittings_hz"] = num_array(report.splittings_hz);
    j["min_splitting_hz"] = num(report.min_splitting_hz);
    j["worst_crosstalk"] = num(report.worst_crosstalk);
    j["distinguishable_threshold"] = num(report.distinguishable_threshold);
    j["distinguishable"] = report.distinguishable;
    j["target_crosstalk"] = report.target_crosstalk ? num(*report.target_crosstalk) : ordered_json(nullptr);
    j["required_gradient_tesla_per_m"] =
        report.required_gradient_tesla_per_m ? num(*report.required_gradient_tesla_per_m) : ordered_json(nullptr);
    j["warnings"] = warnings;
    out.report("address", j);
    return kOk;
}

int cmd_spectrum(const RunConfig& cfg, const Output& out) {
    const auto chain = ionrf::equilibrium_positions(cfg.species, cfg.trap, cfg.ions, cfg.solver);
    const double reference = cfg.grid.relative ? ionrf::resonance_frequency(cfg.field, 0.0, cfg.transition) : 0.0;
    const auto grid = ionrf::linear_grid(cfg.grid.start_hz, cfg.grid.stop_hz, cfg.grid.step_hz);

    std::optional<ionrf::SidebandParams> sidebands;
    std::optional<double> sideband_fwhm;
    ionrf::LineShape line = cfg.line.shape();
    if (cfg.sidebands) {
        sidebands = resolve_sidebands(cfg);
        sideband_fwhm = cfg.sidebands->fwhm_hz;
        if (sideband_fwhm && cfg.line.kind == "lorentzian") {
            // Expand the template here so the sideband width can differ from the carrier.
            ionrf::SpectrumModel expanded;
            expanded.baseline = cfg.line.lorentzian.baseline;
            for (const auto& c : cfg.line.lorentzian.components) {
                for (const auto& part : ionrf::sideband_model(c, *sidebands, sideband_fwhm).components) {
                    expanded.components.push_back(part);
                }
            }
            line = expanded;
        }
    }
    const bool expanded_here = sideband_fwhm && cfg.line.kind == "lorentzian";
    const auto spectrum = ionrf::synthesize_spectrum(chain, cfg.field, cfg.transition, line,
                                                     expanded_here ? std::nullopt : sidebands, grid, reference);

    Table t{{"frequency_hz", "signal"}, {}};
    for (std::size_t i = 0; i < spectrum.size(); ++i) t.rows.push_back({spectrum.frequency_hz[i], spectrum.signal[i]});
    out.table("spectrum", t);

    std::vector<double> centers;
    for (double z : chain.positions) centers.push_back(ionrf::resonance_frequency(cfg.field, z, cfg.transition));
    ordered_json j = header("spectrum", cfg);
    j["n_ions"] = cfg.ions;
    j["line_kind"] = cfg.line.kind;
    j["reference_hz"] = num(reference);
    j["ion_frequencies_hz"] = num_array(centers);
    j["n_points"] = spectrum.size();
    j["sidebands"] = sidebands ? sideband_json(*sidebands, sideband_fwhm) : ordered_json(nullptr);
    out.report("spectrum_summary", j);
    return kOk;
}

int cmd_protocol(const RunConfig& cfg, const Output& out) {
    if (cfg.line.kind != "lorentzian") throw ConfigError("protocol needs line.kind = lorentzian");
    ionrf::SpectrumModel truth = cfg.line.lorentzian;
    std::optional<ionrf::SidebandParams> sidebands;
    if (cfg.sidebands) {
        sidebands = resolve_sidebands(cfg);
        ionrf::SpectrumModel expanded;
        expanded.baseline = truth.baseline;
        for (const auto& c : truth.components) {
            for (const auto& part : ionrf::sideband_model(c, *sidebands, cfg.sidebands->fwhm_hz).components) {
                expanded.components.push_back(part);
            }
        }
        truth = expanded;
    }

    const auto raw = ionrf::run_campaign(truth, cfg.protocol, cfg.drift);
    const auto reduced = ionrf::reduce_campaign(raw);

    Table raw_table{{"cycle_index", "detuning_hz", "counts", "timestamp_s"}, {}};
    for (const auto& r : raw.records) {
        raw_table.rows.push_back({static_cast<double>(r.cycle_index), r.detuning_hz, static_cast<double>(r.counts),
                                  r.timestamp_s});
    }
    out.table("campaign_raw", raw_table);

    Table reduced_table{{"frequency_hz", "signal", "sigma"}, {}};
    for (std::size_t i = 0; i < reduced.points.size(); ++i) {
        reduced_table.rows.push_back(
            {reduced.points.frequency_hz[i], reduced.points.signal[i], reduced.points.sigma[i]});
    }
    out.table("campaign_reduced", reduced_table);

    ordered_json j = header("protocol", cfg);
    j["n_records"] = raw.records.size();
    j["n_cycles"] = raw.records.size() / 7;
    j["duration_s"] = raw.records.empty() ? ordered_json(0.0)
                                          : num(raw.records.back().timestamp_s + cfg.protocol.probe_duration_s);
    j["mode"] = cfg.protocol.mode == ionrf::ScheduleMode::blocked ? "blocked" : "interleaved";
    j["recenter"] = cfg.protocol.recenter;
    j["n_recenters"] = raw.recenters.size();
    ordered_json recenters = ordered_json::array();
    for (const auto& e : raw.recenters) {
        recenters.push_back({{"cycle_index", e.cycle_index},
                             {"timestamp_s", num(e.timestamp_s)},
                             {"fitted_center_hz", num(e.fitted_center_hz)}});
    }
    j["recenters"] = recenters;
    j["center_check"] = {{"plus", num(reduced.center_check.plus)},
                         {"minus", num(reduced.center_check.minus)},
                         {"sigma", num(reduced.center_check.sigma)},
                         {"passed", reduced.center_check.passed}};
    j["degenerate_detunings_hz"] = num_array(reduced.degenerate_detunings_hz);
    j["sidebands"] = sidebands ? sideband_json(*sidebands, cfg.sidebands->fwhm_hz) : ordered_json(nullptr);

    if (sidebands && cfg.protocol_carrier_fwhm_hz) {
        try {
            const auto fit = ionrf::fit_folded_sideband(reduced.points, sidebands->trap_hz,
                                                        *cfg.protocol_carrier_fwhm_hz, cfg.sidebands->fwhm_hz);
            j["sideband_fit"] = {{"ratio", measurement(fit.ratio)},
                                 {"carrier_amplitude", num(fit.carrier_amplitude)},
                                 {"sideband_amplitude", num(fit.sideband_amplitude)},
                                 {"offset", num(fit.offset)},
                                 {"chi_square", num(fit.chi_square)},
                                 {"dof", fit.dof},
                                 {"q_value", num(fit.q_value)}};
        } catch (const ionrf::Error& e) {
            j["sideband_fit"] = {{"error", e.what()}};
        }
    } else {
        j["sideband_fit"] = nullptr;
    }
    out.report("protocol", j);
    return kOk;
}

ordered_json fit_json(const ionrf::FitResult& fit) {
    ordered_json j;
    ordered_json comps = ordered_json::array();
    for (const auto& c : fit.components) {
        comps.push_back({{"center_hz", num(c.center_hz)},
                         {"center_error_hz", num(c.center_error)},
                         {"fwhm_hz", num(c.fwhm_hz)},
                         {"fwhm_error_hz", num(c.fwhm_error)},
                         {"amplitude", num(c.amplitude)},
                         {"amplitude_error", num(c.amplitude_error)}});
    }
    j["components"] = comps;
    j["baseline"] = num(fit.baseline);
    j["baseline_error"] = num(fit.baseline_error);
    j["chi_square"] = num(fit.chi_square);
    j["dof"] = fit.dof;
    j["q_value"] = num(fit.q_value);
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["gradient_norm"] = num(fit.gradient_norm);
    j["degenerate_pair"] = fit.degenerate_pair;
    return j;
}

ordered_json model_fit_json(const ionrf::ModelFit& m) {
    ordered_json j;
    j["components"] = m.n_components;
    j["q_value"] = num(m.q_value());
    if (m.fit) {
        j["chi_square"] = num(m.fit->chi_square);
        j["dof"] = m.fit->dof;
        j["converged"] = m.fit->converged;
        j["error"] = nullptr;
    } else {
        j["chi_square"] = nullptr;
        j["dof"] = nullptr;
        j["converged"] = false;
        j["error"] = m.error;
    }
    return j;
}

struct FitRequest {
    std::string data_path;
    std::optional<int> components;
    std::vector<int> compare;
    bool thermometry = false;
    std::optional<double> eta_eff;
    std::optional<double> trap_hz;
    std::string sideband_kind = "unresolved";
    std::optional<double> folded_carrier_fwhm_hz;
};

ionrf::SidebandKind parse_kind(const std::string& s) {
    if (s == "lower") return ionrf::SidebandKind::lower;
    if (s == "upper") return ionrf::SidebandKind::upper;
    return ionrf::SidebandKind::unresolved;
}

ordered_json thermometry_json(const ionrf::ThermometryResult& t, double eta_eff, double trap_hz,
                              const std::string& kind) {
    ordered_json j;
    j["sideband_kind"] = kind;
    j["eta_eff"] = num(eta_eff);
    j["trap_hz"] = num(trap_hz);
    j["sideband_ratio"] = measurement(t.sideband_ratio);
    j["mean_phonon"] = measurement(t.mean_phonon);
    j["temperature_k"] = measurement(t.temperature_k);
    j["zero_temperature"] = t.zero_temperature;
    return j;
}

int cmd_fit(const RunConfig& cfg, const Output& out, const FitRequest& req) {
    ionrf::Spectrum data;
    {
        std::ifstream in(req.data_path);
        if (!in) throw ConfigError("cannot read data file " + req.data_path);
        try {
            data = ionrf::read_spectrum_csv(in);
        } catch (const ionrf::InvalidInput& e) {
            throw ConfigError(std::string("bad data file: ") + e.what());
        }
    }

    ordered_json warnings = ordered_json::array();
    if (!data.has_sigma()) {
        data.sigma.assign(data.size(), 1.0);
        const std::string w = "data has no sigma column; unit uncertainties assumed, Q values are not meaningful";
        std::cerr << "warning: " << w << "\n";
        warnings.push_back(w);
    }

    if (req.thermometry) {
        if (!req.eta_eff || !req.trap_hz) throw ConfigError("--thermometry needs --eta-eff and --trap-hz");
        if (!(*req.eta_eff > 0.0) || !(*req.trap_hz > 0.0)) {
            throw ConfigError("--eta-eff and --trap-hz must be positive");
        }
    }
    if (req.folded_carrier_fwhm_hz && !req.trap_hz) throw ConfigError("--folded-carrier-fwhm needs --trap-hz");
    for (int c : req.compare) {
        if (c < 1) throw ConfigError("--compare takes two positive component counts");
    }
    if (!req.compare.empty() && req.compare.size() != 2) throw ConfigError("--compare takes exactly two counts A,B");

    ordered_json j;
    j["command"] = "fit";
    j["data_path"] = fs::path(req.data_path).filename().string();
    j["n_points"] = data.size();
    int code = kOk;

    std::optional<ionrf::Measurement> ratio;
    if (req.folded_carrier_fwhm_hz) {
        j["model"] = "folded_sideband";
        try {
            const auto f = ionrf::fit_folded_sideband(data, *req.trap_hz, *req.folded_carrier_fwhm_hz);
            j["fit"] = {{"carrier_amplitude", num(f.carrier_amplitude)},
                        {"sideband_amplitude", num(f.sideband_amplitude)},
                        {"offset", num(f.offset)},
                        {"chi_square", num(f.chi_square)},
                        {"dof", f.dof},
                        {"q_value", num(f.q_value)},
                        {"converged", true}};
            j["error"] = nullptr;
            ratio = f.ratio;
        } catch (const ionrf::RankDeficiencyError& e) {
            j["fit"] = {{"converged", false}};
            j["error"] = e.what();
            code = kFitError;
        }
    } else {
        const int n = req.components.value_or(cfg.fit.components);
        if (n < 1) throw ConfigError("--components must be at least 1");
        j["model"] = "lorentzian_sum";
        try {
            const auto fit = ionrf::fit_lorentzian_sum(data, static_cast<std::size_t>(n), std::nullopt,
                                                       cfg.fit.comparison.fit);
            j["fit"] = fit_json(fit);
            j["error"] = nullptr;
            if (!fit.converged) code = kFitError;

            ordered_json derived;
            ordered_json splittings = ordered_json::array();
            for (const auto& s : ionrf::fitted_splittings(fit)) splittings.push_back(measurement(s));
            derived["splittings_hz"] = splittings;
            if (fit.components.size() >= 2 && req.trap_hz) {
                // Carrier: tallest line. Sideband: the other line nearest one trap quantum away.
                std::size_t carrier = 0;
                for (std::size_t i = 1; i < fit.components.size(); ++i) {
                    if (fit.components[i].amplitude > fit.components[carrier].amplitude) carrier = i;
                }
                std::size_t sideband = carrier == 0 ? 1 : 0;
                auto miss = [&](std::size_t i) {
                    return std::abs(std::abs(fit.components[i].center_hz - fit.components[carrier].center_hz) -
                                    *req.trap_hz);
                };
                for (std::size_t i = 0; i < fit.components.size(); ++i) {
                    if (i != carrier && miss(i) < miss(sideband)) sideband = i;
                }
                ratio = ionrf::sideband_ratio(fit, carrier, sideband);
                derived["carrier_index"] = carrier;
                derived["sideband_index"] = sideband;
                derived["sideband_ratio"] = measurement(*ratio);
            }
            j["derived"] = derived;
        } catch (const ionrf::RankDeficiencyError& e) {
            j["fit"] = {{"converged", false}};
            j["error"] = std::string(e.what()) + " (parameter " + e.parameter() + ")";
            code = kFitError;
        }
    }

    if (!req.compare.empty()) {
        const auto cmp = ionrf::compare_models(data, static_cast<std::size_t>(req.compare[0]),
                                               static_cast<std::size_t>(req.compare[1]), cfg.fit.comparison);
        j["comparison"] = {{"q_threshold", num(cfg.fit.comparison.q_threshold)},
                           {"models", ordered_json::array({model_fit_json(cmp.first), model_fit_json(cmp.second)})},
                           {"preferred_components", cmp.preferred},
                           {"verdict", cmp.verdict}};
    }

    if (req.thermometry) {
        if (!ratio) {
            j["thermometry"] = nullptr;
            warnings.push_back("thermometry skipped: no sideband ratio available from this fit");
            std::cerr << "warning: thermometry skipped: no sideband ratio available from this fit\n";
        } else {
            try {
                const auto t = ionrf::thermometry(*ratio, *req.eta_eff, *req.trap_hz, parse_kind(req.sideband_kind));
                j["thermometry"] = thermometry_json(t, *req.eta_eff, *req.trap_hz, req.sideband_kind);
            } catch (const ionrf::Error& e) {
                j["thermometry"] = nullptr;
                warnings.push_back(std::string("thermometry failed: ") + e.what());
            }
        }
    }
    j["warnings"] = warnings;
    out.report("fit", j);
    if (code == kFitError) std::cerr << "error: fit did not converge; report written with converged=false\n";
    return code;
}

// ---------------------------------------------------------------------------
// Help text

const char* kConfigUnits = R"(Units: lengths [m], frequencies [Hz], fields [T], gradients [T/m], times [s].
Config file: JSON (comments allowed); every key optional, unknown keys rejected.
  species.mass_amu [u]           species.charge [e]
  trap.axial_hz [Hz]             trap.radial_hz [Hz]
  ions [count, 1..100]           solver.tolerance [dimensionless], solver.max_iterations [count]
  field.offset_tesla [T]         field.gradient_tesla_per_m [T/m]
  transition.lande_g [dimensionless], transition.delta_mj [count]
  addressing.linewidth_hz [Hz FWHM], addressing.distinguishable_threshold [fraction],
  addressing.target_crosstalk [fraction]
  line.kind lorentzian: line.fwhm_hz [Hz], line.amplitude [signal], line.baseline [signal]
  line.kind rate_model: line.rf_pump_rate_per_s [1/s], line.repump_rate_per_s [1/s],
    line.carrier_fwhm_hz [Hz], line.branching [4 fractions], line.signal_scale [signal]
  sidebands.eta_eff [dimensionless], sidebands.mean_phonon [quanta] or sidebands.temperature_k [K],
    sidebands.trap_hz [Hz], sidebands.fwhm_hz [Hz], sidebands.extent_convention angular|ordinary
  grid.start_hz, grid.stop_hz, grid.step_hz [Hz], grid.relative [bool, detuning from trap-center resonance]
  protocol.probe_duration_s, protocol.cool_duration_s, protocol.pre_probe_delay_s [s],
    protocol.variable_detunings_hz [Hz], protocol.repeats_per_detuning [count],
    protocol.count_rate_per_s [counts/s per unit signal], protocol.mode interleaved|blocked,
    protocol.recenter [bool], protocol.drift_rate_hz_per_s [Hz/s], protocol.drift_jitter_hz [Hz],
    protocol.carrier_fwhm_hz [Hz]
  fit.components [count], fit.q_threshold [probability], fit.max_iterations [count],
    fit.initial_damping [dimensionless], fit.degenerate_separation [fraction of FWHM]
  seed [integer], output.dir [path], output.format csv|json
Exit codes: 0 ok, 1 runtime error, 2 config error, 3 solver non-convergence, 4 fit non-convergence.)";

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ion-chain rf spectroscopy toolkit. Frequencies in Hz, fields in T, gradients in T/m, "
                 "lengths in m, times in s."};
    app.footer(kConfigUnits);
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all", "Print help for every subcommand");

    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> format;
    app.add_option("--config", config_path, "Config file (JSON with comments; units listed below)");
    app.add_option("--seed", seed, "Random seed [integer], overrides config 'seed'");
    app.add_option("--out", out_dir, "Output directory [path], overrides config 'output.dir'");
    app.add_option("--format", format, "Table format [csv|json], overrides config 'output.format'")
        ->check(CLI::IsMember({"csv", "json"}));

    auto* chain = app.add_subcommand(
        "chain", "Equilibrium positions [m] and adjacent separations [m] of a linear chain; writes chain.csv "
                 "and chain_summary.json. Uses species (mass [u], charge [e]), trap.axial_hz [Hz], ions.");
    auto* address = app.add_subcommand(
        "address", "Per-ion resonance frequencies [Hz] and crosstalk [fraction] in a field B(z) = offset [T] + "
                   "gradient [T/m] * z [m]; writes address.json and address_frequencies.csv.");
    auto* spectrum = app.add_subcommand(
        "spectrum", "Noiseless model spectrum: signal [arb.] vs frequency [Hz] on grid start/stop/step [Hz], "
                    "optional motional sidebands (trap_hz [Hz], eta_eff, mean_phonon [quanta]); writes "
                    "spectrum.csv and spectrum_summary.json.");
    auto* protocol = app.add_subcommand(
        "protocol", "Seeded seven-point campaign on one line (line + sidebands, centered at zero detuning): detunings [Hz], probe/cool/delay times [s], count rate "
                    "[counts/s]; writes campaign_raw.csv (timestamps [s]), campaign_reduced.csv (|detuning| "
                    "[Hz], normalized signal, sigma) and protocol.json.");
    auto* fit = app.add_subcommand(
        "fit", "Fit a sum of Lorentzians (center [Hz], FWHM [Hz], amplitude [signal], baseline [signal]) to a "
               "spectrum CSV with columns frequency_hz,signal[,sigma]; writes fit.json.");

    FitRequest req;
    fit->add_option("data", req.data_path, "Spectrum CSV: frequency_hz [Hz], signal, optional sigma")
        ->required();
    fit->add_option("--components", req.components, "Number of Lorentzian components [count]");
    fit->add_option("--compare", req.compare, "Compare two component counts A,B [count,count] by Q value")
        ->delimiter(',')
        ->expected(2);
    fit->add_flag("--thermometry", req.thermometry,
                  "Convert the sideband/carrier amplitude ratio to mean phonon number [quanta] and "
                  "temperature [K]");
    fit->add_option("--eta-eff", req.eta_eff, "Effective Lamb-Dicke parameter [dimensionless]");
    fit->add_option("--trap-hz", req.trap_hz, "Axial trap frequency [Hz]; also locates the sideband line");
    fit->add_option("--sideband-kind", req.sideband_kind, "Which sideband the ratio refers to [lower|upper|unresolved]")
        ->check(CLI::IsMember({"lower", "upper", "unresolved"}));
    fit->add_option("--folded-carrier-fwhm", req.folded_carrier_fwhm_hz,
                    "Treat data as folded |detuning| [Hz] protocol output and fit carrier plus sideband with this "
                    "carrier FWHM [Hz]; needs --trap-hz");

    for (auto* sub : {chain, address, spectrum, protocol, fit}) sub->footer(kConfigUnits);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        RunConfig cfg;
        try {
            cfg = parse_config(load_document(config_path));
        } catch (const ordered_json::exception& e) {
            throw ConfigError(e.what());
        }
        if (seed) {
            cfg.seed = *seed;
            cfg.protocol.rng_seed = *seed;
        }
        Output out;
        out.dir = out_dir.value_or(cfg.out_dir);
        out.format = format.value_or(cfg.format);

        if (*chain) return cmd_chain(cfg, out);
        if (*address) return cmd_address(cfg, out);
        if (*spectrum) return cmd_spectrum(cfg, out);
        if (*protocol) return cmd_protocol(cfg, out);
        if (*fit) return cmd_fit(cfg, out, req);
        return kConfigError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ionrf::FieldSignError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ionrf::InvalidInput& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ionrf::ConvergenceError& e) {
        std::cerr << "solver did not converge: " << e.what() << " (residual " << ionrf::format_number(e.residual())
                  << ")\n";
        return kSolverError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}
